//! Save a model, load it back bit for bit, and store its coalesced version.

use mlvc::io::{load_checkpoint, save_checkpoint, CheckpointMeta};
use mlvc::model::{init_params, ModelConfig};
use mlvc::projection::{coalesce_model, LevelMapping};

fn main() -> mlvc::Result<()> {
    let dir = std::env::temp_dir().join("mlvc-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| mlvc::Error::Data(e.to_string()))?;
    let config = ModelConfig::new(2, 2, 8, 30, 16);
    let params = init_params::<f32>(&config, 7)?;
    let meta = CheckpointMeta {
        model_config: config.clone(),
        vcycle_config: None,
        step: 0,
        level: 1,
    };
    let path = dir.join("model.mlvc");
    save_checkpoint(&path, &meta, &params)?;
    let loaded = load_checkpoint(&path)?;
    println!(
        "{}: {} tensors, {} params, {}",
        path.display(),
        params.len(),
        loaded.params.num_params(),
        loaded.params.dtype().name()
    );
    println!(
        "identical after reload: {}",
        loaded.params.cast::<f32>() == params
    );

    let m = LevelMapping::halving(&config)?;
    let small = coalesce_model(&params, &m)?;
    let small_meta = CheckpointMeta {
        model_config: m.config_small.clone(),
        level: 2,
        ..meta
    };
    let small_path = dir.join("model.small.mlvc");
    save_checkpoint(&small_path, &small_meta, &small)?;
    println!("{}: {} params", small_path.display(), small.num_params());
    Ok(())
}
