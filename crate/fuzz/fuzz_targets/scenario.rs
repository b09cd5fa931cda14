#![no_main]

use libfuzzer_sys::fuzz_target;
use oscd_core::synthetic::{generate, SyntheticScenario};

fuzz_target!(|data: &[u8]| {
    let Ok(scn) = serde_json::from_slice::<SyntheticScenario>(data) else { return };
    if scn.validate().is_ok() && scn.num_known() <= 16 && scn.unknown_categories.len() <= 16 {
        let (set, table) = generate(&scn, 40).expect("validated scenario generates");
        assert_eq!(table.rows.len(), set.records.len() - set.split(oscd_core::ingest::Split::Train).len());
    }
});
