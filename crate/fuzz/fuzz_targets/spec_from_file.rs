#![no_main]

use libfuzzer_sys::fuzz_target;
use pocketnet::archgraph::{build_graph, spec_from_file, spec_to_file};

fuzz_target!(|data: &[u8]| {
    // Accepted specs must round-trip and build without panicking; an
    // oversized spec can still be refused by the builder.
    if let Ok(spec) = spec_from_file(data) {
        assert_eq!(spec_from_file(&spec_to_file(&spec)).unwrap(), spec);
        if spec.depth <= 6 && spec.base_channels <= 64 && spec.convs_per_block <= 4 {
            let _ = build_graph(&spec);
        }
    }
});
