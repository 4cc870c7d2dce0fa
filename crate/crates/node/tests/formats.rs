use std::path::Path;

use poi_core::consensus::ElectionMode;
use poi_core::fixtures::{generate, GenesisSpec};
use poi_node::chain_file::{decode_chain, ChainFileError};
use poi_node::genesis_file::{parse_genesis, render_genesis};
use poi_node::scenario::parse_scenario;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn arbitrary_chain_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        match decode_chain(&bytes) {
            Ok(blocks) => prop_assert!(!blocks.is_empty()),
            Err(ChainFileError::Framing { offset, .. }) | Err(ChainFileError::Block { offset, .. }) => {
                prop_assert!(offset <= bytes.len())
            }
        }
    }

    #[test]
    fn arbitrary_scenario_text_is_diagnosed(text in "[a-z_ =\\[\\]\"0-9.\n]{0,200}") {
        if let Err(d) = parse_scenario(Path::new("x.toml"), &text) {
            prop_assert!(!d.message.is_empty());
            if let Some(line) = d.line {
                prop_assert!(line >= 1 && line <= text.lines().count().max(1) + 1);
            }
        }
    }

    #[test]
    fn genesis_round_trips(seed in any::<u64>(), miners in 1usize..5, accounts in 0usize..4, vrf in any::<bool>()) {
        let mode = if vrf { ElectionMode::Vrf } else { ElectionMode::RoundRobin };
        let fx = generate(&GenesisSpec { seed, miners, accounts, initial_balance: 7, election_mode: mode });
        let text = render_genesis(&fx.genesis);
        prop_assert_eq!(parse_genesis(Path::new("g.toml"), &text).unwrap(), fx.genesis);
    }
}
