//! End-to-end gradient self-check: the full combined loss (supervised + both
//! reconstructions + uniformity) on small seeded fixtures, differentiated
//! against every parameter tensor and compared with central finite
//! differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datagen::{gen_corpus, GenSpec};
use crate::gradcheck::grad_check;
use crate::graph::MaskPlan;
use crate::model::{init_params, Activation, ModelParams};
use crate::seeding::derive_seed;
use crate::training::{batch_loss, prepare_event, TrainConfig, TrainError, Variant};

/// Finite-difference result for one parameter tensor.
#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub tensor: &'static str,
    pub max_rel_err: f64,
}

/// All per-tensor results for one seeded fixture.
#[derive(Debug, Clone, Serialize)]
pub struct FixtureReport {
    pub seed: u64,
    pub max_rel_err: f64,
    pub checks: Vec<TensorCheck>,
}

impl FixtureReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Tolerance every fixture must meet.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Fixture shape: each fixture is a two-event batch of 6-node events, so the
/// batch uniformity term is live alongside both reconstruction losses and
/// the supervised loss.
fn fixture_genspec(seed: u64) -> GenSpec {
    GenSpec {
        n_events: 2,
        classes: 2,
        d: 6,
        min_nodes: 6,
        max_nodes: 6,
        noise_sigma: 0.25,
        seed,
        ..GenSpec::default()
    }
}

fn fixture_config() -> TrainConfig {
    TrainConfig {
        d_h: 7,
        alpha1: 0.3,
        alpha2: 0.5,
        t: 2.0,
        mask_ratio: 0.25,
        variant: Variant::Full,
        activation: Activation::Relu,
        ..TrainConfig::default()
    }
}

/// Check one fixture: every parameter tensor of the full loss against
/// central finite differences (eps 1e-5).
pub fn check_fixture(seed: u64) -> Result<FixtureReport, TrainError> {
    let genspec = fixture_genspec(seed);
    let corpus = gen_corpus(&genspec)?;
    let cfg = fixture_config();
    let params: ModelParams<f64> = init_params(
        cfg.model_dims(genspec.d, genspec.classes),
        cfg.activation,
        derive_seed(seed, 7),
    );
    let prepared = corpus
        .events
        .iter()
        .map(prepare_event)
        .collect::<Result<Vec<_>, _>>()?;
    let batch: Vec<usize> = (0..prepared.len()).collect();
    // The mask plans are fixed once so the loss is a pure function of the
    // parameters across finite-difference evaluations.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 8));
    let plans: Vec<MaskPlan> = prepared
        .iter()
        .map(|ev| MaskPlan::sample(ev.node_count(), cfg.mask_ratio, &mut rng))
        .collect::<Result<_, _>>()?;

    let mut checks = Vec::new();
    let mut worst = 0.0f64;
    for (name, tensor) in params.trainable() {
        let err = grad_check(
            |tape| {
                let (total, _) = batch_loss(tape, &params, &prepared, &batch, &cfg, &plans)
                    .map_err(|e| crate::tensor::KernelError::Contract {
                        op: "selfcheck",
                        msg: e.to_string(),
                    })?;
                Ok(total)
            },
            &[tensor],
            1e-5,
        )?;
        worst = worst.max(err);
        checks.push(TensorCheck {
            tensor: name,
            max_rel_err: err,
        });
    }
    Ok(FixtureReport {
        seed,
        max_rel_err: worst,
        checks,
    })
}

/// Run the suite over several seeds.
pub fn full_loss_gradcheck(seeds: &[u64]) -> Result<Vec<FixtureReport>, TrainError> {
    seeds.iter().map(|&s| check_fixture(s)).collect()
}

/// Default fixture seeds for the command-line self-check.
pub const DEFAULT_FIXTURE_SEEDS: [u64; 3] = [0, 1, 2];
