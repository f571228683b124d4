#![allow(dead_code)]

use esg_forge::backend::RetryPolicy;
use esg_forge::dataset::{Pillar, QaTriplet};
use esg_forge::eco::ProbeConfig;
use esg_forge::harness::{Clock, Mode, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: [&str; 24] = [
    "carbon",
    "board",
    "water",
    "supply",
    "chain",
    "audit",
    "policy",
    "waste",
    "energy",
    "labour",
    "risk",
    "scope",
    "emissions",
    "diversity",
    "governance",
    "report",
    "target",
    "climate",
    "safety",
    "ethics",
    "disclosure",
    "renewable",
    "community",
    "oversight",
];

/// `n` triplets with lowercase, punctuation-free answers of 1 to 20 words,
/// so the token count of an answer is its whitespace word count.
pub fn synthetic_triplets(n: usize, seed: u64) -> Vec<QaTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pillars = [Pillar::Environmental, Pillar::Social, Pillar::Governance];
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=20);
            let words: Vec<&str> = (0..len)
                .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())])
                .collect();
            let topic = VOCAB[i % VOCAB.len()];
            QaTriplet {
                id: format!("q{i:04}"),
                question: format!("What does the company disclose about {topic} item {i}?"),
                answer: words.join(" "),
                context: format!("Passage {i} covers {topic} and {}.", words.join(" ")),
                pillar: pillars[i % 3],
            }
        })
        .collect()
}

pub fn run_config(backend: &str, mode: Mode) -> RunConfig {
    let mut c = RunConfig {
        mode,
        model_label: format!("{backend}-{mode}"),
        ..Default::default()
    };
    c.backend.kind = backend.into();
    c.retry = RetryPolicy {
        max_attempts: 3,
        base_delay_ms: 0,
        max_delay_ms: 0,
    };
    if mode.needs_index() {
        c.index = Some("unused-index-path".into());
    }
    c.energy.intensity = Some(0.113);
    c.energy.region = "test".into();
    c.energy.clock = Clock::Simulated;
    c.energy.simulated_latency_s = 2.0;
    c.energy.probes.push(ProbeConfig {
        watts: Some(300.0),
        ..Default::default()
    });
    c
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Strategies from the registries, with an in-memory index over the item
/// contexts when the mode needs one.
pub fn run_env(config: &RunConfig, items: &[QaTriplet]) -> esg_forge::harness::RunEnv {
    let mut no_index = config.clone();
    no_index.index = None;
    let mut env = esg_forge::harness::RunEnv::from_config(&no_index).unwrap();
    if config.mode.needs_index() {
        let contexts: Vec<(String, String)> = items
            .iter()
            .map(|t| (t.id.clone(), t.context.clone()))
            .collect();
        env.index =
            Some(esg_forge::retrieval::build_index(&contexts, env.embedder.as_ref(), 64).unwrap());
        env.contexts = contexts.into_iter().collect();
    }
    env
}
