use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Model variants used for ablation. At most one of the two reader-only
/// variants may be set, and neither combines with the graph switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Skip attention and gating against the previous step's locations.
    pub no_coref_across: bool,
    /// Skip self-attention among locations within a step (`U_t = I`).
    pub no_coref_within: bool,
    /// Replace the graph with one LSTM per entity fed the answer vectors.
    pub lstm_graph_unit: bool,
    /// Reader alone on paragraph prefixes; no graph.
    pub mrc_only_prefix: bool,
    /// Reader alone on the whole paragraph; no graph.
    pub mrc_only_paragraph: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("conflicting ablation flags: {0}")]
pub struct AblationConflict(pub String);

impl Ablation {
    pub fn validate(&self) -> Result<(), AblationConflict> {
        if self.mrc_only_prefix && self.mrc_only_paragraph {
            return Err(AblationConflict(
                "mrc_only_prefix and mrc_only_paragraph are exclusive".into(),
            ));
        }
        let graph_flags = self.no_coref_across || self.no_coref_within || self.lstm_graph_unit;
        if self.reader_only() && graph_flags {
            return Err(AblationConflict(
                "reader-only variants have no graph to ablate".into(),
            ));
        }
        if self.lstm_graph_unit && (self.no_coref_across || self.no_coref_within) {
            return Err(AblationConflict(
                "the LSTM graph unit has no coreference to ablate".into(),
            ));
        }
        Ok(())
    }

    pub fn reader_only(&self) -> bool {
        self.mrc_only_prefix || self.mrc_only_paragraph
    }

    pub fn has_graph(&self) -> bool {
        !self.reader_only()
    }

    /// Short label for logs.
    pub fn label(&self) -> &'static str {
        match *self {
            a if a.mrc_only_prefix => "mrc-only-prefix",
            a if a.mrc_only_paragraph => "mrc-only-paragraph",
            a if a.lstm_graph_unit => "lstm-graph-unit",
            a if a.no_coref_across && a.no_coref_within => "no-coref",
            a if a.no_coref_across => "no-coref-across",
            a if a.no_coref_within => "no-coref-within",
            _ => "full",
        }
    }
}

/// Architecture and regularization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of the frozen word vectors.
    pub embed_dim: usize,
    /// Hidden units per direction of the paragraph encoder.
    pub hidden: usize,
    pub encoder_layers: usize,
    /// Width of node, span and question vectors.
    pub node_dim: usize,
    pub graph_layers: usize,
    pub dropout_recurrent: f64,
    pub dropout_other: f64,
    pub max_span_len: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 50,
            hidden: 64,
            encoder_layers: 2,
            node_dim: 64,
            graph_layers: 2,
            dropout_recurrent: 0.4,
            dropout_other: 0.3,
            max_span_len: 15,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Encoder input: word vector plus exact-match, current-sentence and
    /// initial-step flags.
    pub fn token_input_dim(&self) -> usize {
        self.embed_dim + 3
    }

    /// Width of one contextual token vector.
    pub fn context_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.embed_dim == 0 || self.hidden == 0 || self.node_dim == 0 {
            return Err("dimensions must be positive".into());
        }
        if self.node_dim % 2 != 0 {
            return Err("node_dim must be even (question encoder is bidirectional)".into());
        }
        if self.encoder_layers == 0 || self.graph_layers == 0 || self.max_span_len == 0 {
            return Err("layer counts and max_span_len must be positive".into());
        }
        for (name, p) in [
            ("dropout_recurrent", self.dropout_recurrent),
            ("dropout_other", self.dropout_other),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1)"));
            }
        }
        self.ablation.validate().map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = ModelConfig::default();
        assert_eq!((c.hidden, c.encoder_layers, c.graph_layers), (64, 2, 2));
        assert_eq!((c.dropout_recurrent, c.dropout_other), (0.4, 0.3));
        assert_eq!(c.context_dim(), 128);
        c.validate().unwrap();
    }

    #[test]
    fn conflicting_flags() {
        let both = Ablation {
            mrc_only_prefix: true,
            mrc_only_paragraph: true,
            ..Default::default()
        };
        assert!(both.validate().is_err());
        let mixed = Ablation {
            mrc_only_prefix: true,
            no_coref_across: true,
            ..Default::default()
        };
        assert!(mixed.validate().is_err());
        let ok = Ablation {
            no_coref_across: true,
            no_coref_within: true,
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.label(), "no-coref");
    }
}
