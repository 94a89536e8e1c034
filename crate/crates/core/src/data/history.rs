use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::records::ClickEvent;

pub const MAX_HISTORY: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryClick {
    pub news_id: String,
    pub ts: i64,
}

/// Recent clicks of one user, oldest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    pub clicks: Vec<HistoryClick>,
}

impl UserHistory {
    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }
}

/// Per-user click streams sorted by time (ties keep log order).
#[derive(Clone, Debug, Default)]
pub struct ClickLog {
    by_user: HashMap<String, Vec<HistoryClick>>,
}

impl ClickLog {
    pub fn new(clicks: &[ClickEvent]) -> Self {
        let mut by_user: HashMap<String, Vec<HistoryClick>> = HashMap::new();
        for c in clicks {
            by_user
                .entry(c.user.clone())
                .or_default()
                .push(HistoryClick {
                    news_id: c.news_id.clone(),
                    ts: c.ts,
                });
        }
        for v in by_user.values_mut() {
            v.sort_by_key(|c| c.ts);
        }
        ClickLog { by_user }
    }

    pub fn users(&self) -> usize {
        self.by_user.len()
    }
}

/// The `max_len` most recent clicks strictly before `impression_time`.
pub fn build_user_history(
    log: &ClickLog,
    user_id: &str,
    impression_time: i64,
    max_len: usize,
) -> UserHistory {
    let clicks = match log.by_user.get(user_id) {
        Some(stream) => {
            let end = stream.partition_point(|c| c.ts < impression_time);
            let start = end.saturating_sub(max_len);
            stream[start..end].to_vec()
        }
        None => Vec::new(),
    };
    UserHistory {
        user_id: user_id.to_string(),
        clicks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(n: i64) -> ClickLog {
        let clicks: Vec<ClickEvent> = (0..n)
            .map(|i| ClickEvent {
                user: "u".into(),
                news_id: format!("n{i}"),
                ts: 100 + i,
            })
            .collect();
        ClickLog::new(&clicks)
    }

    #[test]
    fn keeps_latest_fifty() {
        let h = build_user_history(&log(70), "u", 10_000, MAX_HISTORY);
        assert_eq!(h.len(), 50);
        assert_eq!(h.clicks[0].news_id, "n20");
        assert_eq!(h.clicks[49].news_id, "n69");
    }

    #[test]
    fn unknown_user_is_cold() {
        assert!(build_user_history(&log(3), "nobody", 10_000, MAX_HISTORY).is_empty());
    }

    #[test]
    fn click_at_impression_time_is_excluded() {
        let h = build_user_history(&log(5), "u", 102, MAX_HISTORY);
        assert_eq!(
            h.clicks.iter().map(|c| c.ts).collect::<Vec<_>>(),
            vec![100, 101]
        );
    }
}
