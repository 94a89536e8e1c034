use std::collections::HashMap;

use pprec_core::data::{
    generate_synthetic_corpus, Corpus, PrepareSettings, PreparedCorpus, SyntheticConfig,
};

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Average ranks (ties share the mean rank).
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

fn click_and_show_counts(corpus: &Corpus) -> HashMap<&str, (f64, f64)> {
    let mut counts: HashMap<&str, (f64, f64)> = HashMap::new();
    for imp in corpus.all_impressions() {
        for (id, label) in &imp.items {
            let e = counts.entry(id.as_str()).or_default();
            e.0 += f64::from(*label);
            e.1 += 1.0;
        }
    }
    counts
}

#[test]
fn clicks_ignore_popularity_when_weight_is_zero() {
    let cfg = SyntheticConfig {
        users: 2000,
        news: 4000,
        impressions: 50_000,
        pop_weight: 0.0,
        ..Default::default()
    };
    let s = generate_synthetic_corpus(&cfg, 17).unwrap();
    let counts = click_and_show_counts(&s.corpus);
    let (mut clicks, mut latent) = (Vec::new(), Vec::new());
    for n in &s.corpus.news {
        clicks.push(counts.get(n.id.as_str()).map_or(0.0, |c| c.0));
        latent.push(s.latent_quality[&n.id]);
    }
    let rho = pearson(&clicks, &latent);
    println!("pearson(clicks, latent) = {rho:.4}");
    assert!(rho.abs() < 0.05, "rho = {rho}");
}

#[test]
fn ctr_tracks_popularity_when_weight_is_one() {
    let cfg = SyntheticConfig {
        news: 300,
        impressions: 50_000,
        pop_weight: 1.0,
        ..Default::default()
    };
    let s = generate_synthetic_corpus(&cfg, 17).unwrap();
    // per news: clicks, shows, summed latent popularity at show time
    let mut acc: HashMap<&str, (f64, f64, f64)> = HashMap::new();
    for imp in s.corpus.all_impressions() {
        for (id, label) in &imp.items {
            let e = acc.entry(id.as_str()).or_default();
            e.0 += f64::from(*label);
            e.1 += 1.0;
            e.2 += s.latent_popularity(id, imp.ts).unwrap();
        }
    }
    let (mut ctr, mut latent) = (Vec::new(), Vec::new());
    for (clicks, shown, pop) in acc.values() {
        ctr.push(clicks / shown);
        latent.push(pop / shown);
    }
    let rho = spearman(&ctr, &latent);
    println!("spearman(ctr, latent) = {rho:.4} over {} news", ctr.len());
    assert!(rho > 0.9, "rho = {rho}");
}

#[test]
fn histories_never_leak_future_clicks() {
    let cfg = SyntheticConfig {
        users: 300,
        news: 200,
        impressions: 3000,
        ..Default::default()
    };
    let s = generate_synthetic_corpus(&cfg, 2).unwrap();
    let p = PreparedCorpus::prepare(&s.corpus, &PrepareSettings::default(), None).unwrap();
    let mut cold = 0;
    for sample in p.train.iter().chain(&p.valid).chain(&p.test) {
        assert!(sample.history.len() <= 50);
        assert!(sample.history.iter().all(|h| h.click_time < sample.time));
        assert!(sample
            .history
            .windows(2)
            .all(|w| w[0].click_time <= w[1].click_time));
        cold += usize::from(sample.history.is_empty());
    }
    assert!(cold > 0, "expected some cold-start impressions");
}

#[test]
fn generated_corpus_round_trips_through_files() {
    let cfg = SyntheticConfig {
        users: 50,
        news: 60,
        impressions: 300,
        ..Default::default()
    };
    let s = generate_synthetic_corpus(&cfg, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    s.corpus.save(dir.path()).unwrap();
    assert_eq!(Corpus::load(dir.path()).unwrap(), s.corpus);
}
