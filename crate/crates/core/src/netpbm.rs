//! Binary 8-bit PPM (P6) and PGM (P5) files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};

use crate::error::{Error, Result};

/// Decoded raster: `width * height * channels` bytes, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub bytes: Vec<u8>,
}

fn read(path: &Path, want: PnmSubtype, label: &str) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = PnmDecoder::new(BufReader::new(file))
        .map_err(|e| Error::format(path, format!("not a valid {label}: {e}")))?;
    if decoder.subtype() != want {
        return Err(Error::format(
            path,
            format!("expected binary {label}, found {:?}", decoder.subtype()),
        ));
    }
    if decoder.header().maximal_sample() != 255 {
        return Err(Error::format(
            path,
            format!(
                "expected maxval 255, found {}",
                decoder.header().maximal_sample()
            ),
        ));
    }
    let (w, h) = decoder.dimensions();
    let mut bytes = vec![0u8; decoder.total_bytes() as usize];
    decoder
        .read_image(&mut bytes)
        .map_err(|e| Error::format(path, format!("truncated {label}: {e}")))?;
    Ok(Raster {
        width: w as usize,
        height: h as usize,
        bytes,
    })
}

fn write(
    path: &Path,
    subtype: PnmSubtype,
    color: ExtendedColorType,
    width: usize,
    height: usize,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| Error::format(path, e.to_string()))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Raster> {
    read(
        path,
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        "P6 pixmap",
    )
}

pub fn read_pgm(path: &Path) -> Result<Raster> {
    read(
        path,
        PnmSubtype::Graymap(SampleEncoding::Binary),
        "P5 graymap",
    )
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write(
        path,
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        ExtendedColorType::Rgb8,
        width,
        height,
        rgb,
    )
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    write(
        path,
        PnmSubtype::Graymap(SampleEncoding::Binary),
        ExtendedColorType::L8,
        width,
        height,
        gray,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13) as u8).collect();
        write_ppm(&p, 3, 2, &rgb).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6"));
        let r = read_ppm(&p).unwrap();
        assert_eq!((r.width, r.height), (3, 2));
        assert_eq!(r.bytes, rgb);

        let g = dir.path().join("a.pgm");
        write_pgm(&g, 2, 2, &[0, 255, 255, 0]).unwrap();
        assert!(std::fs::read(&g).unwrap().starts_with(b"P5"));
        assert_eq!(read_pgm(&g).unwrap().bytes, vec![0, 255, 255, 0]);
        assert!(read_ppm(&g).is_err());
    }

    #[test]
    fn rejects_ascii_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ascii.pgm");
        std::fs::write(&p, "P2\n2 1\n255\n0 255\n").unwrap();
        assert!(read_pgm(&p).is_err());
        std::fs::write(&p, "hello").unwrap();
        assert!(read_pgm(&p).is_err());
        let low = dir.path().join("low.pgm");
        std::fs::write(&low, b"P5\n2 1\n1\n\x00\x01").unwrap();
        assert!(read_pgm(&low).is_err());
    }
}
