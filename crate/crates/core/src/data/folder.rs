use std::fs;
use std::path::{Path, PathBuf};

use atms_tensor::Scalar;
use image::imageops::FilterType;
use image::RgbImage;

use super::{denormalize_rgb, normalize_rgb, Dataset, Provenance, Sample};
use crate::error::{KdError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub loaded: usize,
    pub skipped: Vec<PathBuf>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| KdError::io(dir, e))? {
        out.push(entry.map_err(|e| KdError::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Loads `root/<class>/<image>`; classes are indexed in sorted name order.
/// Images are resized bilinearly to `image_size` squared when needed.
/// Files that fail to decode are skipped and listed in the stats.
pub fn load_folder<T: Scalar>(root: &Path, image_size: usize) -> Result<(Dataset<T>, LoadStats)> {
    if image_size == 0 {
        return Err(KdError::Config("image size must be positive".into()));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(KdError::Data(format!("{} has no class subdirectories", root.display())));
    }
    let mut stats = LoadStats::default();
    let mut samples = Vec::new();
    let mut class_names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut count = 0;
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            let img = match image::open(&file) {
                Ok(img) => img.to_rgb8(),
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    stats.skipped.push(file);
                    continue;
                }
            };
            let img = if img.dimensions() == (image_size as u32, image_size as u32) {
                img
            } else {
                image::imageops::resize(&img, image_size as u32, image_size as u32, FilterType::Triangle)
            };
            samples.push(Sample {
                image: normalize_rgb(img.as_raw(), image_size, image_size),
                label,
            });
            count += 1;
        }
        if count == 0 {
            return Err(KdError::Data(format!("class `{name}` has no decodable images")));
        }
        stats.loaded += count;
        class_names.push(name);
    }
    let ds = Dataset {
        samples,
        class_names,
        provenance: Provenance::Folder {
            root: root.to_path_buf(),
            image_size,
        },
    };
    Ok((ds, stats))
}

/// Writes every sample as `root/<class>/<index>.png`.
pub fn export_folder<T: Scalar>(data: &Dataset<T>, root: &Path) -> Result<()> {
    for name in &data.class_names {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| KdError::io(&dir, e))?;
    }
    for (i, s) in data.samples.iter().enumerate() {
        let (h, w) = (s.image.shape()[1], s.image.shape()[2]);
        let img = RgbImage::from_raw(w as u32, h as u32, denormalize_rgb(&s.image)).expect("buffer size matches");
        let path = root.join(&data.class_names[s.label]).join(format!("{i:05}.png"));
        img.save(&path).map_err(|e| KdError::format(&path, e))?;
    }
    Ok(())
}
