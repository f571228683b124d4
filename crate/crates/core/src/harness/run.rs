use super::{
    default_modes, strip_reasoning, Clock, HarnessError, ItemError, ItemStatus, Journal, Mode,
    ModeEnv, ModeSpec, ModeStrategy, RunConfig, Transcript,
};
use crate::backend::{default_backends, GenerationBackend, RequestContext};
use crate::dataset::QaTriplet;
use crate::eco::{
    default_probes, ledger_report, measure_span, track, ConsumptionRow, EnergyRecord, LedgerEntry,
    PowerProbe,
};
use crate::embedding::{default_embedders, EmbeddingProvider};
use crate::metrics::{score_pair, GenScores};
use crate::readability::{analyze, ReadabilityReport};
use crate::retrieval::{load_contexts, KbIndex, ToolCallKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

/// Live strategy objects for one run.
pub struct RunEnv {
    pub backend: Arc<dyn GenerationBackend>,
    /// Query embedder for retrieval.
    pub embedder: Arc<dyn EmbeddingProvider>,
    /// Token embedder for BERTScore.
    pub scorer: Arc<dyn EmbeddingProvider>,
    pub index: Option<KbIndex>,
    pub contexts: BTreeMap<String, String>,
    pub probes: Vec<Arc<dyn PowerProbe>>,
    pub mode: Box<dyn ModeStrategy>,
}

impl RunEnv {
    /// Build every strategy from the default registries.
    pub fn from_config(config: &RunConfig) -> Result<Self, HarnessError> {
        let backend: Arc<dyn GenerationBackend> = default_backends()
            .build(&config.backend.kind, &config.backend)?
            .into();
        let embedders = default_embedders();
        let embedder: Arc<dyn EmbeddingProvider> = embedders
            .build(&config.embedder.kind, &config.embedder)?
            .into();
        let scorer: Arc<dyn EmbeddingProvider> = embedders
            .build(
                &config.scoring.bert_embedder.kind,
                &config.scoring.bert_embedder,
            )?
            .into();
        let probe_reg = default_probes();
        let probes = config
            .energy
            .probes
            .iter()
            .map(|p| probe_reg.build(&p.kind, p).map(Arc::from))
            .collect::<Result<Vec<Arc<dyn PowerProbe>>, _>>()?;
        let (index, contexts) = match &config.index {
            Some(dir) => (Some(KbIndex::load(dir)?), load_contexts(dir)?),
            None => (None, BTreeMap::new()),
        };
        let mode = default_modes().build(
            config.mode.as_str(),
            &ModeSpec {
                template_version: config.template_version.clone(),
            },
        )?;
        Ok(Self {
            backend,
            embedder,
            scorer,
            index,
            contexts,
            probes,
            mode,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub journal: Option<PathBuf>,
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallStats {
    pub valid: usize,
    pub malformed: usize,
    pub near_miss: usize,
    pub no_call: usize,
}

/// Aggregate of one model in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model_label: String,
    pub mode: Mode,
    /// Means over items that completed.
    pub scores: Option<GenScores>,
    /// Means over completed items with enough text for the formulas.
    pub readability: Option<ReadabilityReport>,
    pub n_items: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub n_degenerate: usize,
    pub n_truncated: usize,
    pub tool_calls: ToolCallStats,
    pub mean_latency_s: f64,
    pub consumption: ConsumptionRow,
    /// Set only by [`assign_ranks`](super::assign_ranks).
    pub rank: Option<u32>,
}

impl ModelRow {
    pub fn from_transcripts(
        model_label: &str,
        mode: Mode,
        transcripts: &[Transcript],
        intensity: f64,
        region: &str,
    ) -> Result<Self, HarnessError> {
        let ok: Vec<&Transcript> = transcripts.iter().filter(|t| t.is_ok()).collect();
        let mut tool_calls = ToolCallStats::default();
        for o in transcripts.iter().flat_map(|t| &t.tool_calls) {
            match o.outcome.kind {
                ToolCallKind::Valid => tool_calls.valid += 1,
                ToolCallKind::Malformed => tool_calls.malformed += 1,
                ToolCallKind::NoCall => tool_calls.no_call += 1,
            }
            if o.outcome.is_near_miss() {
                tool_calls.near_miss += 1;
            }
        }
        let entries: Vec<LedgerEntry> = transcripts
            .iter()
            .map(|t| LedgerEntry {
                model_label: model_label.to_string(),
                energy: t.energy.clone(),
            })
            .collect();
        let mut consumption = ledger_report(&entries, intensity, region)?.remove(0);
        consumption.model = model_label.to_string();
        let n = transcripts.len();
        Ok(Self {
            model_label: model_label.to_string(),
            mode,
            scores: GenScores::mean(ok.iter().filter_map(|t| t.scores.as_ref())),
            readability: ReadabilityReport::mean(ok.iter().filter_map(|t| t.readability.as_ref())),
            n_items: n,
            n_ok: ok.len(),
            n_failed: n - ok.len(),
            n_degenerate: ok.iter().filter(|t| t.readability_degenerate).count(),
            n_truncated: transcripts.iter().filter(|t| t.truncated).count(),
            tool_calls,
            mean_latency_s: if n == 0 {
                0.0
            } else {
                transcripts.iter().map(|t| t.latency_s).sum::<f64>() / n as f64
            },
            consumption,
            rank: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// In dataset order, including items restored from the journal.
    pub transcripts: Vec<Transcript>,
    pub row: ModelRow,
    pub resumed: usize,
}

/// Evaluate `items`. Items already in the journal are not re-run.
pub fn run_eval(
    config: &RunConfig,
    items: &[QaTriplet],
    env: &RunEnv,
    options: &RunOptions,
) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    if env.mode.mode() != config.mode {
        return Err(HarnessError::Config(format!(
            "strategy `{}` does not match configured mode `{}`",
            env.mode.mode(),
            config.mode
        )));
    }
    if let Some(index) = &env.index {
        if index.embedder_id() != env.embedder.id() {
            return Err(HarnessError::Config(format!(
                "index was built with embedder `{}` but the run uses `{}`",
                index.embedder_id(),
                env.embedder.id()
            )));
        }
    }
    let mut seen = HashSet::new();
    for it in items {
        if !seen.insert(it.id.as_str()) {
            return Err(HarnessError::Config(format!(
                "duplicate item id `{}`",
                it.id
            )));
        }
    }
    let (mut journal, restored) = match &options.journal {
        Some(p) => {
            let (j, done) = Journal::open(p, &config.fingerprint(), options.resume)?;
            (Some(j), done)
        }
        None => (None, Vec::new()),
    };
    let mut done: HashMap<String, Transcript> = HashMap::new();
    for t in restored {
        if !seen.contains(t.item_id.as_str()) {
            tracing::warn!(item = %t.item_id, "journal item is not in the dataset; ignored");
            continue;
        }
        done.insert(t.item_id.clone(), t);
    }
    let resumed = done.len();
    let pending: Vec<&QaTriplet> = items
        .iter()
        .filter(|it| !done.contains_key(&it.id))
        .collect();

    let workers = config
        .backend
        .max_in_flight
        .min(env.backend.max_in_flight())
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    tracing::info!(
        pending = pending.len(),
        resumed,
        workers,
        mode = %config.mode,
        "starting evaluation"
    );
    for chunk in pending.chunks(workers * 4) {
        let generated: Vec<Result<Transcript, HarnessError>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|it| run_item(config, env, it))
                .collect()
        });
        let mut scored = generated.into_iter().collect::<Result<Vec<_>, _>>()?;
        scored
            .par_iter_mut()
            .for_each(|t| score_transcript(config, env, t));
        for t in scored {
            if let Some(j) = journal.as_mut() {
                j.append(&t)?;
            }
            done.insert(t.item_id.clone(), t);
        }
    }
    let transcripts: Vec<Transcript> = items
        .iter()
        .map(|it| done.remove(&it.id).expect("every item has a transcript"))
        .collect();
    let intensity = config.energy.intensity.expect("validated");
    let mut row = ModelRow::from_transcripts(
        &config.model_label,
        config.mode,
        &transcripts,
        intensity,
        &config.energy.region,
    )?;
    super::assign_ranks(std::slice::from_mut(&mut row));
    Ok(RunOutcome {
        transcripts,
        row,
        resumed,
    })
}

fn run_item(
    config: &RunConfig,
    env: &RunEnv,
    item: &QaTriplet,
) -> Result<Transcript, HarnessError> {
    let mode_env = ModeEnv {
        backend: env.backend.as_ref(),
        embedder: env.embedder.as_ref(),
        index: env.index.as_ref(),
        contexts: &env.contexts,
        params: config.generation,
        retry: config.retry,
        k: config.k,
        max_steps: config.max_steps,
        tool_name: &config.tool_name,
    };
    let ctx = RequestContext {
        item_id: &item.id,
        reference: Some(&item.answer),
    };
    let mut exchanges = Vec::new();
    let energy_cfg = &config.energy;
    let (result, latency_s, energy): (_, f64, EnergyRecord) = match energy_cfg.clock {
        Clock::Simulated => {
            let r = env.mode.answer(item, &mode_env, &ctx, &mut exchanges);
            let latency = energy_cfg.simulated_latency_s * exchanges.len() as f64;
            let e = measure_span(&env.probes, 0.0, latency, energy_cfg.interval_s)?;
            (r, latency, e)
        }
        Clock::Wall => {
            let ((r, latency), e) = track(&env.probes, energy_cfg.interval_s, || {
                let start = Instant::now();
                let r = env.mode.answer(item, &mode_env, &ctx, &mut exchanges);
                (r, start.elapsed().as_secs_f64())
            })?;
            (r, latency, e)
        }
    };
    let mut t = Transcript {
        item_id: item.id.clone(),
        mode: config.mode,
        model_label: config.model_label.clone(),
        question: item.question.clone(),
        reference: item.answer.clone(),
        prompt: String::new(),
        hits: Vec::new(),
        tool_calls: Vec::new(),
        raw_output: String::new(),
        answer: String::new(),
        latency_s,
        energy,
        status: ItemStatus::Ok,
        exchanges,
        steps: 0,
        truncated: false,
        usage: Default::default(),
        scores: None,
        readability: None,
        readability_degenerate: false,
    };
    match result {
        Err(e) => {
            tracing::warn!(item = %item.id, "item failed: {e}");
            t.status = ItemStatus::Failed { error: e };
        }
        Ok(out) => {
            t.answer = match &config.reasoning_tags {
                Some((open, close)) => strip_reasoning(&out.raw_output, open, close),
                None => out.raw_output.trim().to_string(),
            };
            t.prompt = out.prompt;
            t.hits = out.hits;
            t.tool_calls = out.tool_calls;
            t.raw_output = out.raw_output;
            t.steps = out.steps;
            t.truncated = out.truncated;
            t.usage = out.usage;
        }
    }
    Ok(t)
}

fn score_transcript(config: &RunConfig, env: &RunEnv, t: &mut Transcript) {
    if !t.is_ok() {
        return;
    }
    match score_pair(
        &t.answer,
        &t.reference,
        &config.scoring.metrics,
        env.scorer.as_ref(),
    ) {
        Ok(s) => t.scores = Some(s),
        Err(e) => {
            t.status = ItemStatus::Failed {
                error: ItemError::Scoring(e.to_string()),
            }
        }
    }
    match analyze(&t.answer) {
        Ok((_, r)) => t.readability = Some(r),
        Err(_) => t.readability_degenerate = true,
    }
}
