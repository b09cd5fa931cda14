#![no_main]

use libfuzzer_sys::fuzz_target;
use oscd_core::communities::SuiteManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = SuiteManifest::parse(text) {
        let again = SuiteManifest::parse(&m.to_json()).expect("re-parse");
        assert_eq!(again.communities.len(), m.communities.len());
    }
});
