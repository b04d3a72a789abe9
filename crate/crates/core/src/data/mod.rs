//! Monthly panels: CSV ingestion, synthetic ground truth, normalization,
//! chronological splits, model windows and stock omission.

mod csv_io;
mod normalize;
mod omit;
mod panel;
mod split;
mod synthetic;
mod window;

pub use csv_io::{load_csv, read_csv, write_betas_csv, write_csv, write_csv_to, write_factors_csv};
pub use normalize::normalize_characteristics;
pub use omit::omit_stocks;
pub use panel::{PanelDataset, YearMonth};
pub use split::{split, SplitSpec};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticSpec, DEFAULT_BETA_INTERCEPT, DEFAULT_BETA_SCALE};
pub use window::{forecast_window, window_ending, windows_in, Window};
