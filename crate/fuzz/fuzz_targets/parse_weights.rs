#![no_main]

use hrl_tsch::env::Requirements;
use hrl_tsch::experiment::RankingWeights;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(phi) = Requirements::parse(text) {
        let sum: f64 = phi.as_array().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
    let _ = RankingWeights::parse(text);
});
