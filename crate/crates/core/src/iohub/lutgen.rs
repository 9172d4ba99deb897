//! MAP generation from a calibration document.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::calib::{Calibration, CalibrationError};
use crate::lut::{build_lut, LutError, MapHeader, QuiltGeometry};

#[derive(Debug, Error)]
pub enum MapGenError {
    #[error("invalid calibration: {0}")]
    Calibration(#[from] CalibrationError),
    #[error("{0} exists; pass force to overwrite")]
    OutputExists(PathBuf),
    #[error(transparent)]
    Lut(#[from] LutError),
}

/// Builds the table for `calibration_text` and `geometry` and writes it to
/// `output`. An existing file is kept unless `force` is set.
pub fn generate_map(
    calibration_text: &str,
    geometry: &QuiltGeometry,
    output: &Path,
    force: bool,
) -> Result<MapHeader, MapGenError> {
    let cal = Calibration::parse(calibration_text)?;
    let geometry = QuiltGeometry::new(geometry.rows, geometry.cols, geometry.tile_w, geometry.tile_h)?;
    if output.exists() && !force {
        return Err(MapGenError::OutputExists(output.to_owned()));
    }
    let map = build_lut(&cal.effective(), &geometry)?;
    map.save(output)?;
    Ok(MapHeader::read(output)?)
}
