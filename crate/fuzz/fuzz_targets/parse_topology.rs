#![no_main]

use hrl_tsch::netmodel::TopologyFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = TopologyFile::from_json(text) {
        // building may reject the layout but must not panic
        if let Ok(g) = file.build() {
            let _ = hrl_tsch::netmodel::ForwardingTree::build(&g);
        }
    }
});
