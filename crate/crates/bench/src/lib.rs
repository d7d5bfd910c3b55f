//! Benchmark fixtures shared by the criterion targets.

use netcoupler::coupling::{FitConfig, HyperRegressor, PointMassHp};
use netcoupler::model::{sample_dataset, KernelShape, MdsModel, ModelConfig, SyntheticDataset};
use netcoupler::rng::{seeded, substream};

/// A prior-predictive dataset with its true hyper-parameters frozen as a
/// point mass, and an initialized regressor.
pub struct Fixture {
    pub model: MdsModel,
    pub data: SyntheticDataset,
    pub hp: PointMassHp,
    pub regressor: HyperRegressor,
    pub weights: Vec<f64>,
    pub config: FitConfig,
}

pub fn fixture(m: usize, t: usize, s_hp: usize, s_p: usize) -> Fixture {
    let model =
        MdsModel::new(ModelConfig::new(m, t, 16), KernelShape::default()).expect("valid model");
    let data = sample_dataset(&model, &mut seeded(1)).expect("stable draw");
    let hp = PointMassHp {
        hyper: data.hyper(),
    };
    let config = FitConfig {
        s_hp,
        s_p,
        ..FitConfig::new(1)
    };
    let regressor = HyperRegressor::new(config.regressor.clone(), &model.config);
    let weights = regressor.init(
        &mut substream(1, &[0]),
        config.init_log_std_x,
        config.init_log_std_a,
    );
    Fixture {
        model,
        data,
        hp,
        regressor,
        weights,
        config,
    }
}
