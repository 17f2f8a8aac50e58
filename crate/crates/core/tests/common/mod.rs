#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vla_rig::codec::fit_codec_to_actions;
use vla_rig::policy::{DecodeMode, FeatureEncoder, TokenPolicy};
use vla_rig::simlab::{collect_demonstrations, SimConfig, OBS_DIM};
use vla_rig::{ActionCodec, ActionSpec, TokenMap};

/// Codec fitted to a handful of expert demonstrations.
pub fn simlab_codec() -> ActionCodec {
    let eps = collect_demonstrations(&SimConfig::default(), 10, 0, false);
    fit_codec_to_actions(
        eps.iter()
            .flat_map(|e| e.steps.iter().map(|s| s.action.as_slice())),
        ActionSpec::default(),
        TokenMap::llama(256),
    )
    .unwrap()
}

/// Policy with seeded Gaussian-ish weights so predictions vary with the input.
pub fn random_policy(seed: u64, mode: DecodeMode) -> TokenPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = TokenPolicy::new(
        ActionSpec::default(),
        FeatureEncoder::new(OBS_DIM, 64),
        mode,
    );
    p.weights
        .iter_mut()
        .for_each(|w| *w = rng.random_range(-1.0..1.0));
    p.biases
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-1.0..1.0));
    p
}

const WORDS: [&str; 8] = [
    "pick", "place", "the", "block", "goal", "move", "onto", "target",
];

pub fn random_request(rng: &mut ChaCha8Rng) -> (Vec<f64>, String) {
    let obs = (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = rng.random_range(0..6);
    let words: Vec<&str> = (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect();
    (obs, words.join(" "))
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
