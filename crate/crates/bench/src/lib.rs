//! Shared fixtures for the benchmarks.

use dystrat::data::{generate_mackey_glass, make_windows, normalize, split, MackeyGlassParams, SplitSpec, WindowedDataset};

/// Normalized Mackey-Glass windows split into (train, eval).
pub fn mackey_glass_split(n: usize, window: usize, horizon: usize) -> (WindowedDataset, WindowedDataset) {
    let ts = normalize(&generate_mackey_glass(n, &MackeyGlassParams::default(), 0).expect("valid params"))
        .expect("non-constant series");
    let ds = make_windows(&ts, window, horizon).expect("series long enough");
    split(&ds, &SplitSpec::default()).expect("non-empty split")
}
