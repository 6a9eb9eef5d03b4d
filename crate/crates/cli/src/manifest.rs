//! Run manifests: a config snapshot plus one event per synthesis step.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use procmat::synth::{
    ContextMode, EntryKind, EntryStatus, Proposal, Proposer, ProposerContext, ProposerError, RepairAction,
    SynthConfig, SynthStats, SynthesisTree,
};
use procmat::RenderSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub mode: String,
    pub proposer: String,
    pub max_nodes: usize,
    pub max_total_proposals: usize,
    pub preview_resolution: u32,
    pub render_resolution: u32,
    pub seed: u64,
    pub repair: bool,
    pub token_budget: usize,
    pub corrupt: Option<f64>,
    pub target: Option<String>,
    pub optimize: usize,
}

impl ConfigSnapshot {
    pub fn mode(&self) -> ContextMode {
        ContextMode::parse(&self.mode).unwrap_or_default()
    }

    pub fn synth_config(&self) -> Result<SynthConfig, String> {
        let render = RenderSettings::new(self.preview_resolution, self.seed).map_err(|e| e.to_string())?;
        Ok(SynthConfig {
            max_nodes: self.max_nodes,
            max_total_proposals: self.max_total_proposals,
            mode: self.mode(),
            render,
            repair_enabled: self.repair,
            seed: self.seed,
            token_budget: self.token_budget,
            log_dir: None,
        })
    }

    pub fn run_id(&self) -> String {
        let json = serde_json::to_string(self).expect("snapshot serializes");
        hex(&Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: usize,
    /// `node` or `end`.
    pub kind: String,
    pub proposal_sha256: String,
    pub proposal: String,
    /// `valid` or `invalid`.
    pub verdict: String,
    pub code: Option<String>,
    pub message: Option<String>,
    pub repairs: Vec<String>,
    /// Nodes dropped from the active path after this step.
    pub backtracked: usize,
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: ConfigSnapshot,
    pub events: Vec<StepEvent>,
    pub outputs: BTreeMap<String, String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn describe(a: &RepairAction) -> String {
    match a {
        RepairAction::DroppedParam { key } => format!("dropped_param {key}"),
        RepairAction::InsertedConverter { node, type_name, slot } => {
            format!("inserted {type_name} {node} -> {slot}")
        }
    }
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// One event per tree entry, in step order.
pub fn events(tree: &SynthesisTree, stats: &SynthStats) -> Vec<StepEvent> {
    let mut backtracks = stats.backtracks.iter();
    let mut entries: Vec<_> = tree.entries.iter().filter(|e| e.kind != EntryKind::Root).collect();
    entries.sort_by_key(|e| e.step);
    entries
        .into_iter()
        .map(|e| {
            let invalid = e.status == EntryStatus::Invalid;
            let t = &e.timings;
            StepEvent {
                step: e.step,
                kind: if e.kind == EntryKind::End { "end" } else { "node" }.into(),
                proposal_sha256: hex(&Sha256::digest(e.text.as_bytes())),
                proposal: e.text.clone(),
                verdict: if invalid { "invalid" } else { "valid" }.into(),
                code: e.error.as_ref().map(|(c, _)| c.clone()),
                message: e.error.as_ref().map(|(_, m)| m.clone()),
                repairs: e.actions.iter().map(describe).collect(),
                backtracked: if invalid { backtracks.next().copied().unwrap_or(0) } else { 0 },
                timings_ms: [
                    ("context", ms(t.context)),
                    ("propose", ms(t.propose)),
                    ("validate", ms(t.validate)),
                    ("render", ms(t.render)),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            }
        })
        .collect()
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))
    }
}

/// Plays back the proposals recorded in a manifest.
pub struct ManifestProposer {
    events: Vec<StepEvent>,
    next: usize,
}

impl ManifestProposer {
    pub fn new(m: &RunManifest) -> Self {
        ManifestProposer {
            events: m.events.clone(),
            next: 0,
        }
    }
}

impl Proposer for ManifestProposer {
    fn propose(&mut self, _: &ProposerContext) -> Result<Proposal, ProposerError> {
        let e = self
            .events
            .get(self.next)
            .ok_or_else(|| ProposerError::Failure("manifest has no more recorded steps".into()))?;
        self.next += 1;
        Ok(if e.kind == "end" {
            Proposal::End(e.proposal.clone())
        } else {
            Proposal::Node(e.proposal.clone())
        })
    }
}
