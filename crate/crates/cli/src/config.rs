//! Flat `key = value` training configuration files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use statetrack_core::TrainConfig;

/// Applies every `key = value` line of `text` to `config`. Blank lines and
/// lines starting with `#` are skipped.
pub fn apply(config: &mut TrainConfig, text: &str) -> Result<()> {
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("config line {}: expected `key = value`", k + 1))?;
        set(config, key.trim(), value.trim()).with_context(|| format!("config line {}", k + 1))?;
    }
    Ok(())
}

pub fn load(config: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    apply(config, &text)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

pub fn set(c: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let m = &mut c.model;
    let a = &mut m.ablation;
    match key {
        "learning_rate" | "lr" => c.learning_rate = parse(key, value)?,
        "batch_size" => c.batch_size = parse(key, value)?,
        "epochs" => c.epochs = parse(key, value)?,
        "seed" => c.seed = parse(key, value)?,
        "patience" => c.patience = parse(key, value)?,
        "embed_dim" => m.embed_dim = parse(key, value)?,
        "hidden" => m.hidden = parse(key, value)?,
        "encoder_layers" => m.encoder_layers = parse(key, value)?,
        "node_dim" => m.node_dim = parse(key, value)?,
        "graph_layers" => m.graph_layers = parse(key, value)?,
        "dropout_recurrent" => m.dropout_recurrent = parse(key, value)?,
        "dropout_other" => m.dropout_other = parse(key, value)?,
        "max_span_len" => m.max_span_len = parse(key, value)?,
        "no_coref_across" => a.no_coref_across = parse(key, value)?,
        "no_coref_within" => a.no_coref_within = parse(key, value)?,
        "lstm_graph_unit" => a.lstm_graph_unit = parse(key, value)?,
        "mrc_only_prefix" => a.mrc_only_prefix = parse(key, value)?,
        "mrc_only_paragraph" => a.mrc_only_paragraph = parse(key, value)?,
        other => bail!("unknown config key `{other}`"),
    }
    Ok(())
}

/// The configuration as a file `apply` reads back.
pub fn render(c: &TrainConfig) -> String {
    let m = &c.model;
    let a = &m.ablation;
    format!(
        "learning_rate = {}\nbatch_size = {}\nepochs = {}\nseed = {}\npatience = {}\n\
         embed_dim = {}\nhidden = {}\nencoder_layers = {}\nnode_dim = {}\ngraph_layers = {}\n\
         dropout_recurrent = {}\ndropout_other = {}\nmax_span_len = {}\n\
         no_coref_across = {}\nno_coref_within = {}\nlstm_graph_unit = {}\n\
         mrc_only_prefix = {}\nmrc_only_paragraph = {}\n",
        c.learning_rate,
        c.batch_size,
        c.epochs,
        c.seed,
        c.patience,
        m.embed_dim,
        m.hidden,
        m.encoder_layers,
        m.node_dim,
        m.graph_layers,
        m.dropout_recurrent,
        m.dropout_other,
        m.max_span_len,
        a.no_coref_across,
        a.no_coref_within,
        a.lstm_graph_unit,
        a.mrc_only_prefix,
        a.mrc_only_paragraph,
    )
}
