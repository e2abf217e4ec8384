use std::path::PathBuf;

use snl_core::harness::TrainConfig;
use snl_core::{BlockConfig, Variant};

fn read(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn shipped_train_configs_match_the_demonstration_settings() {
    let snl = BlockConfig::new(Variant::Snl, 8, 4);
    for (file, block) in [("long_range_snl.json", Some(snl)), ("long_range_baseline.json", None)] {
        let cfg: TrainConfig = serde_json::from_str(&read(file)).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg, TrainConfig::long_range(block), "{file}");
    }
    let b: BlockConfig = serde_json::from_str(&read("block_snl.json")).unwrap();
    assert_eq!(b, snl);
}
