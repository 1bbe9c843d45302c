#![no_main]

use hrl_tsch::experiment::{rank, RankingWeights, ScoreTable};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = ScoreTable::from_csv(data) {
        let ranked = rank(&table, &RankingWeights::balanced()).expect("validated table ranks");
        assert_eq!(ranked.len(), table.rows.len());
    }
});
