//! Layered configuration: built-in defaults, then a JSON file, then flags.

use std::path::Path;

use pprec_core::data::SyntheticConfig;
use pprec_core::model::ModelConfig;
use pprec_core::{Error, Result};
use serde::de::DeserializeOwned;

use crate::args::{GenDataArgs, ModelArgs};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn model_config(args: &ModelArgs) -> Result<ModelConfig> {
    let mut c: ModelConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ModelConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { c.$field = v; })*
        };
    }
    set!(
        seed,
        epochs,
        batch_size,
        learning_rate,
        dropout,
        word_dim,
        entity_dim,
        heads,
        head_dim,
        query_dim,
        recency_dim,
        popularity_dim,
        popularity_hidden,
        gate_hidden,
        max_history
    );
    if let Some(h) = args.ctr_window_hours {
        c.ctr.window_hours = h;
    }
    c.single_layer_gate |= args.single_layer_gate;
    let a = &mut c.ablations;
    a.no_popularity_score |= args.no_popularity_score;
    a.no_matching_score |= args.no_matching_score;
    a.no_ctr |= args.no_ctr;
    a.no_content |= args.no_content;
    a.no_recency |= args.no_recency;
    a.no_user_popularity |= args.no_user_popularity;
    a.no_knowledge |= args.no_knowledge;
    c.validate()?;
    Ok(c)
}

pub fn synthetic_config(args: &GenDataArgs) -> Result<SyntheticConfig> {
    let mut c: SyntheticConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SyntheticConfig::default(),
    };
    if let Some(v) = args.users {
        c.users = v;
    }
    if let Some(v) = args.news {
        c.news = v;
    }
    if let Some(v) = args.impressions {
        c.impressions = v;
    }
    if let Some(v) = args.pop_weight {
        c.pop_weight = v;
    }
    if let Some(v) = args.candidates {
        c.candidates_per_impression = v;
    }
    c.validate()?;
    Ok(c)
}

/// Report label for a model: "PP-Rec" plus its ablations.
pub fn method_label(config: &ModelConfig) -> String {
    let labels = config.ablations.labels();
    if labels.is_empty() {
        "PP-Rec".to_string()
    } else {
        format!("PP-Rec[{}]", labels.join(","))
    }
}
