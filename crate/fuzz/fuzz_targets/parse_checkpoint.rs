#![no_main]

use hrl_tsch::dqn::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = Checkpoint::from_json(text) {
        let input = vec![0.5; c.online.input_len()];
        let _ = c.online.forward(&input);
    }
});
