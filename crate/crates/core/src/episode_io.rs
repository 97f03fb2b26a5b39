//! On-disk episode layout:
//!
//! ```text
//! <dir>/image.ppm        binary P6, 8-bit
//! <dir>/masks/<i>.pgm    binary P5, 0 or 255, i = referent index
//! <dir>/phrases.json     ordered array of strings
//! <dir>/meta.json        {"seed": .., "side": .., "policy": ..}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
use crate::synth::{Episode, OrderPolicy, Referent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub side: usize,
    pub policy: Option<OrderPolicy>,
}

pub fn mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("masks").join(format!("{index}.pgm"))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let gray: Vec<u8> = mask.bits().iter().map(|&b| b * 255).collect();
    write_pgm(path, mask.width(), mask.height(), &gray)
}

/// Reads a 0/255 mask; any other gray level is a format error.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let raster = read_pgm(path)?;
    let bits = raster
        .bytes
        .iter()
        .map(|&v| match v {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(Error::format(
                path,
                format!("mask pixel value {other} is not 0 or 255"),
            )),
        })
        .collect::<Result<Vec<u8>>>()?;
    Mask::from_bits(raster.height, raster.width, bits)
}

pub fn write_episode(ep: &Episode, dir: &Path) -> Result<()> {
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    write_ppm(&dir.join("image.ppm"), ep.side, ep.side, &ep.image)?;
    for (i, r) in ep.referents.iter().enumerate() {
        write_mask(&mask_path(dir, i), &r.mask)?;
    }
    write_json(&dir.join("phrases.json"), &ep.phrases())?;
    write_json(
        &dir.join("meta.json"),
        &EpisodeMeta {
            seed: ep.seed,
            side: ep.side,
            policy: ep.policy,
        },
    )
}

pub fn read_phrases(path: &Path) -> Result<Vec<String>> {
    read_json(path)
}

pub fn read_episode(dir: &Path) -> Result<Episode> {
    let meta: EpisodeMeta = read_json(&dir.join("meta.json"))?;
    let phrases = read_phrases(&dir.join("phrases.json"))?;
    let image_path = dir.join("image.ppm");
    let raster = read_ppm(&image_path)?;
    if (raster.width, raster.height) != (meta.side, meta.side) {
        return Err(Error::format(
            &image_path,
            format!(
                "image is {}x{}, meta.json says side {}",
                raster.width, raster.height, meta.side
            ),
        ));
    }
    let mut referents = Vec::with_capacity(phrases.len());
    for (i, phrase) in phrases.into_iter().enumerate() {
        let path = mask_path(dir, i);
        let mask = read_mask(&path)?;
        if (mask.width(), mask.height()) != (meta.side, meta.side) {
            return Err(Error::format(&path, "mask size differs from the image"));
        }
        referents.push(Referent { phrase, mask });
    }
    let extra = mask_path(dir, referents.len());
    if extra.exists() {
        return Err(Error::format(&extra, "more masks than phrases"));
    }
    Ok(Episode {
        side: meta.side,
        image: raster.bytes,
        referents,
        seed: meta.seed,
        policy: meta.policy,
    })
}

/// Episode subdirectories of `dir`, sorted by name.
pub fn episode_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("meta.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn load_episodes(dir: &Path) -> Result<Vec<Episode>> {
    episode_dirs(dir)?.iter().map(|d| read_episode(d)).collect()
}
