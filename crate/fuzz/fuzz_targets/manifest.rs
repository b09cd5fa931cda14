#![no_main]

use libfuzzer_sys::fuzz_target;
use oscd_core::ingest::{parse_samples, validate_splits, ManifestSchema};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for reject_unknown_fields in [true, false] {
        let schema = ManifestSchema {
            reject_unknown_fields,
            ..ManifestSchema::default()
        };
        if let Ok(set) = parse_samples(text, &schema) {
            let _ = validate_splits(&set, false);
            // whatever parses must survive a write/parse cycle unchanged
            let again = parse_samples(&set.to_manifest_string(), &schema).expect("re-parse");
            assert_eq!(again, set);
        }
    }
});
