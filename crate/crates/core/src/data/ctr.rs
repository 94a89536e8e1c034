//! Windowed click/impression statistics.
//!
//! [`CtrIndex`] stores every shown event per news (time-sorted, with click
//! prefix sums) so a [`CtrSnapshot`] at any reference time answers window
//! queries in `O(log n)`. Windows are half-open: `[T − t, T)`; nothing at or
//! after `T` is ever counted.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::records::RawImpression;

/// What a "view" is for the view-count baselines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewCounting {
    /// Every time the news was shown in an impression.
    #[default]
    Impressions,
    /// Only shown events that were clicked.
    Clicks,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtrSettings {
    pub window_hours: u32,
    /// Additive smoothing: `(clicks + prior_clicks) / (impressions + prior_impressions)`.
    pub prior_clicks: f64,
    pub prior_impressions: f64,
    /// Window used by the RecentPop baseline.
    pub recent_views_hours: u32,
    pub view_counting: ViewCounting,
}

impl Default for CtrSettings {
    fn default() -> Self {
        CtrSettings {
            window_hours: 1,
            prior_clicks: 1.0,
            prior_impressions: 20.0,
            recent_views_hours: 1,
            view_counting: ViewCounting::Impressions,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct NewsEvents {
    times: Vec<i64>,
    /// `click_prefix[i]` = clicks among the first `i` events.
    click_prefix: Vec<u64>,
}

impl NewsEvents {
    fn range(&self, from: i64, to: i64) -> (usize, usize) {
        let lo = self.times.partition_point(|&t| t < from);
        let hi = self.times.partition_point(|&t| t < to);
        (lo, hi)
    }

    fn counts(&self, from: i64, to: i64) -> (u64, u64) {
        let (lo, hi) = self.range(from, to);
        (
            self.click_prefix[hi] - self.click_prefix[lo],
            (hi - lo) as u64,
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct CtrIndex {
    events: HashMap<String, NewsEvents>,
}

impl CtrIndex {
    pub fn from_impressions<'a, I>(impressions: I) -> Self
    where
        I: IntoIterator<Item = &'a RawImpression>,
    {
        let mut raw: HashMap<String, Vec<(i64, bool)>> = HashMap::new();
        for imp in impressions {
            for (id, clicked) in &imp.items {
                raw.entry(id.clone())
                    .or_default()
                    .push((imp.ts, *clicked == 1));
            }
        }
        let events = raw
            .into_iter()
            .map(|(id, mut ev)| {
                ev.sort_by_key(|e| e.0);
                let mut click_prefix = Vec::with_capacity(ev.len() + 1);
                click_prefix.push(0);
                let mut acc = 0;
                for e in &ev {
                    acc += u64::from(e.1);
                    click_prefix.push(acc);
                }
                let times = ev.into_iter().map(|e| e.0).collect();
                (
                    id,
                    NewsEvents {
                        times,
                        click_prefix,
                    },
                )
            })
            .collect();
        CtrIndex { events }
    }

    pub fn snapshot(&self, reference_time: i64, settings: CtrSettings) -> CtrSnapshot<'_> {
        CtrSnapshot {
            index: self,
            reference_time,
            settings,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WindowStats {
    pub clicks: u64,
    pub impressions: u64,
    pub lifetime_views: u64,
    pub recent_views: u64,
}

/// Statistics as seen at `reference_time`.
#[derive(Clone, Copy, Debug)]
pub struct CtrSnapshot<'a> {
    index: &'a CtrIndex,
    pub reference_time: i64,
    pub settings: CtrSettings,
}

impl CtrSnapshot<'_> {
    pub fn stats(&self, news_id: &str) -> WindowStats {
        let Some(ev) = self.index.events.get(news_id) else {
            return WindowStats::default();
        };
        let t = self.reference_time;
        let window = i64::from(self.settings.window_hours) * 3600;
        let (clicks, impressions) = ev.counts(t - window, t);
        let recent = i64::from(self.settings.recent_views_hours) * 3600;
        let (life_clicks, life_shown) = ev.counts(i64::MIN, t);
        let (recent_clicks, recent_shown) = ev.counts(t - recent, t);
        let (lifetime_views, recent_views) = match self.settings.view_counting {
            ViewCounting::Impressions => (life_shown, recent_shown),
            ViewCounting::Clicks => (life_clicks, recent_clicks),
        };
        WindowStats {
            clicks,
            impressions,
            lifetime_views,
            recent_views,
        }
    }

    /// Smoothed near-real-time CTR of `news_id`.
    pub fn ctr(&self, news_id: &str) -> f64 {
        let s = self.stats(news_id);
        smoothed_ctr(s.clicks, s.impressions, &self.settings)
    }
}

pub fn smoothed_ctr(clicks: u64, impressions: u64, settings: &CtrSettings) -> f64 {
    (clicks as f64 + settings.prior_clicks) / (impressions as f64 + settings.prior_impressions)
}

/// Smoothed CTR in the window ending at the snapshot's reference time.
pub fn compute_ctr(snapshot: &CtrSnapshot<'_>, news_id: &str) -> f64 {
    snapshot.ctr(news_id)
}
