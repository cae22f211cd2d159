//! The bundled corpus: machine programs mirroring the MVar/RPC/handshake
//! examples and the calculus terms driving the simulation checker.

/// One corpus entry: name, file name, source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Example {
    pub name: &'static str,
    pub file: &'static str,
    pub source: &'static str,
}

macro_rules! corpus {
    ($( $name:literal => $file:literal ),* $(,)?) => {
        &[ $( Example { name: $name, file: $file, source: include_str!(concat!("../corpus/", $file)) } ),* ]
    };
}

/// Machine programs (`.octm`).
pub const OCTM_EXAMPLES: &[Example] = corpus![
    "handshake-open" => "handshake_open.octm",
    "handshake-isolated" => "handshake_isolated.octm",
    "mvar" => "mvar.octm",
    "mvar-race" => "mvar_race.octm",
    "rpc" => "rpc.octm",
    "rpc-tx" => "rpc_tx.octm",
];

/// Calculus terms (`.tccs`) for the simulation checker.
pub const TCCS_EXAMPLES: &[Example] = corpus![
    "sync" => "sync.tccs",
    "chain3" => "chain3.tccs",
    "choice" => "choice.tccs",
    "tsum-join" => "tsum_join.tccs",
    "tsync-fusion" => "tsync_fusion.tccs",
    "fused-commit" => "fused_commit.tccs",
    "tab" => "tab.tccs",
    "tnew" => "tnew.tccs",
    "restrict" => "restrict.tccs",
    "rec" => "rec.tccs",
];

/// The full manifest.
pub fn load_examples() -> Vec<Example> {
    OCTM_EXAMPLES
        .iter()
        .chain(TCCS_EXAMPLES.iter())
        .copied()
        .collect()
}

pub fn find(name: &str) -> Option<Example> {
    load_examples()
        .into_iter()
        .find(|e| e.name == name || e.file == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn octm_examples_parse() {
        for e in OCTM_EXAMPLES {
            crate::syntax::parse_program(e.source)
                .unwrap_or_else(|err| panic!("{}: {err}", e.name));
        }
    }

    #[test]
    fn tccs_examples_parse_and_are_well_formed() {
        for e in TCCS_EXAMPLES {
            let p = crate::tccsm::parse_tccs(e.source)
                .unwrap_or_else(|err| panic!("{}: {err}", e.name));
            crate::tccsm::well_formed(&p).unwrap_or_else(|err| panic!("{}: {err}", e.name));
        }
    }
}
