#![no_main]

use hrl_tsch::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let _ = cfg.hash();
        if cfg.topology.is_none() {
            let _ = cfg.scenario();
        }
    }
});
