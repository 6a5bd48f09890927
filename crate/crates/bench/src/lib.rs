//! Shared inputs for the benchmarks.

/// Reactions of assorted sizes, all valid.
pub const REACTIONS: &[&str] = &[
    "CC[->=]O.O[=>-]O",
    "CCO[.>-]C(C)(=O)[->.]O",
    "c1ccc(Cl)cc1C(C)[->=]O.O[=>-]O",
    "CC(C)N[.>-]C(c1ccc(OC)cc1)(=O)[->.]O",
    "COc1ccc(CC(C#N)C([->.]Br)[.>-]NCc2ccccc2)cc1",
    "CCOC(=O)CC(C)(C)c1ccc(C(F)(F)F)cc1C(Cc1ccncc1)[->=]O.O[=>-]O",
];
