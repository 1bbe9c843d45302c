#![no_main]

use hrl_tsch::schedule::TschSchedule;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = TschSchedule::from_json(text) {
        let back = TschSchedule::from_json(&s.to_json()).expect("serialized schedule reloads");
        assert_eq!(back.sorted_entries(), s.sorted_entries());
    }
});
