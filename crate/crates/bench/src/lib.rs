//! Fixtures shared by the benchmarks.

use qfan::config::RunConfig;
use qfan::data::synth_showers;
use qfan::training::train;
use qfan::{Dataset, Model, ModelBundle, ShowerRecipe};

pub fn showers(d: usize, n: usize) -> Dataset {
    synth_showers(&ShowerRecipe::default(), d, n, 0).expect("default recipe is valid")
}

/// A bundle trained on the short budget, enough to exercise generation.
pub fn short_bundle(data: &Dataset) -> ModelBundle {
    let config = RunConfig::short_budget();
    let model = Model::new(&config.model, data.d(), 0).expect("default model");
    let out = train(&model, &config.train, data, 0).expect("training");
    ModelBundle::new(model, out.theta, out.fits, config.train).expect("bundle")
}
