//! Image grids, pianorolls and heatmaps as Netpbm files (plus PNG with the
//! `png` feature).

use std::fs;
use std::path::{Path, PathBuf};

use autodiff::Tensor;

use crate::error::{Error, Result};
use crate::melody::{Melody, MelodyFormat, PitchSet, FIRST_PITCH, HOLD};

/// Note-on color for pitches outside the highlighted set.
pub const TINT: [u8; 3] = [230, 40, 40];
const NOTE_ON: [u8; 3] = [255, 255, 255];
const SUSTAIN: [u8; 3] = [150, 150, 150];
const SUSTAIN_TINT: [u8; 3] = [140, 30, 30];

/// `[0, 1]` intensity to a byte, `round(v · 255)` after clamping.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit raster with 1 (grey) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    fn set(&mut self, x: usize, y: usize, px: &[u8]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(px);
    }

    fn blit(&mut self, src: &Raster, x0: usize, y0: usize) {
        for y in 0..src.height {
            for x in 0..src.width {
                self.set(x0 + x, y0 + y, src.pixel(x, y));
            }
        }
    }

    /// Binary PGM (`P5`) for grey, PPM (`P6`) for RGB.
    pub fn to_netpbm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn netpbm_extension(&self) -> &'static str {
        if self.channels == 1 {
            "pgm"
        } else {
            "ppm"
        }
    }

    #[cfg(feature = "png")]
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(if self.channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc
                .write_header()
                .map_err(|e| Error::Invalid(format!("png: {e}")))?;
            w.write_image_data(&self.data)
                .map_err(|e| Error::Invalid(format!("png: {e}")))?;
        }
        Ok(out)
    }

    /// Writes `stem.pgm|ppm` and, when available, `stem.png`.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let stem = stem.as_ref();
        if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut written = Vec::new();
        let p = stem.with_extension(self.netpbm_extension());
        fs::write(&p, self.to_netpbm()).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        #[cfg(feature = "png")]
        {
            let p = stem.with_extension("png");
            fs::write(&p, self.to_png()?).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
        Ok(written)
    }
}

fn tile(cells: &[Raster], rows: usize, cols: usize) -> Result<Raster> {
    if cells.len() > rows * cols {
        return Err(Error::Invalid(format!(
            "{} cells do not fit a {rows}x{cols} grid",
            cells.len()
        )));
    }
    let first = cells
        .first()
        .ok_or_else(|| Error::Invalid("empty grid".into()))?;
    let (w, h, ch) = (first.width, first.height, first.channels);
    let mut out = Raster::new(w * cols, h * rows, ch);
    for (k, c) in cells.iter().enumerate() {
        out.blit(c, (k % cols) * w, (k / cols) * h);
    }
    Ok(out)
}

/// Tiles images (rows of `images`, each `height × width` intensities in
/// `[0, 1]`) in row-major order.
pub fn image_grid(images: &Tensor, height: usize, width: usize, rows: usize, cols: usize) -> Result<Raster> {
    let (n, d) = images.dims2("image_grid")?;
    if d != height * width {
        return Err(Error::Invalid(format!("images have {d} pixels, expected {height}x{width}")));
    }
    let cells: Vec<Raster> = (0..n)
        .map(|i| Raster {
            width,
            height,
            channels: 1,
            data: images.row(i).iter().map(|&v| quantize(v)).collect(),
        })
        .collect();
    tile(&cells, rows, cols)
}

/// One pianoroll: time left to right, pitch bottom to top. Note-ons outside
/// `highlight` (and their sustains) are drawn in [`TINT`].
pub fn pianoroll(m: &Melody, format: &MelodyFormat, highlight: Option<&PitchSet>) -> Raster {
    let rows = format.pitch_count();
    let mut r = Raster::new(m.len(), rows, 3);
    let mut sounding: Option<(usize, bool)> = None;
    for (t, &tok) in m.tokens.iter().enumerate() {
        if tok >= FIRST_PITCH {
            let row = (tok - FIRST_PITCH) as usize;
            let pitch = format.pitch_base + row as u32;
            let out = highlight.is_some_and(|s| !s.contains(pitch));
            r.set(t, rows - 1 - row, if out { &TINT } else { &NOTE_ON });
            sounding = Some((row, out));
        } else if tok == HOLD {
            if let Some((row, out)) = sounding {
                r.set(t, rows - 1 - row, if out { &SUSTAIN_TINT } else { &SUSTAIN });
            }
        } else {
            sounding = None;
        }
    }
    r
}

pub fn pianoroll_grid(
    melodies: &[Melody],
    format: &MelodyFormat,
    highlight: Option<&PitchSet>,
    rows: usize,
    cols: usize,
) -> Result<Raster> {
    let cells: Vec<Raster> = melodies
        .iter()
        .map(|m| {
            // one-pixel separator below and right of each roll
            let roll = pianoroll(m, format, highlight);
            let mut padded = Raster::new(roll.width + 1, roll.height + 1, 3);
            padded.data.fill(40);
            padded.blit(&roll, 0, 0);
            padded
        })
        .collect();
    tile(&cells, rows, cols)
}

/// Greyscale heatmap of `values[row][col]` linearly mapped from `[lo, hi]`.
pub fn heatmap(values: &[Vec<f64>], lo: f64, hi: f64, scale: usize) -> Result<Raster> {
    let h = values.len();
    let w = values.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || values.iter().any(|r| r.len() != w) || scale == 0 {
        return Err(Error::Invalid("heatmap needs a nonempty rectangular grid".into()));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut r = Raster::new(w * scale, h * scale, 1);
    for (y, row) in values.iter().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            let px = [quantize((v - lo) / span)];
            for dy in 0..scale {
                for dx in 0..scale {
                    r.set(x * scale + dx, y * scale + dy, &px);
                }
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_grey_image_quantizes_to_128() {
        let img = Tensor::full([1, 6], 0.5);
        let r = image_grid(&img, 2, 3, 1, 1).unwrap();
        let pgm = r.to_netpbm();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[128u8; 6]);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.2), 0);
    }

    #[test]
    fn grid_cells_are_row_major() {
        let imgs = Tensor::new([3, 1], vec![0.0, 0.5, 1.0]).unwrap();
        let r = image_grid(&imgs, 1, 1, 2, 2).unwrap();
        assert_eq!(r.data, vec![0, 128, 255, 0]);
        assert!(image_grid(&imgs, 1, 1, 1, 2).is_err());
    }

    #[test]
    fn out_of_set_notes_are_tinted() {
        let f = MelodyFormat::default();
        // C4 then C#4 held
        let m = Melody::new(vec![2, 1, 3, 1], 16).unwrap();
        let r = pianoroll(&m, &f, Some(&PitchSet::c_major()));
        let rows = f.pitch_count();
        assert_eq!(r.pixel(0, rows - 1), &NOTE_ON);
        assert_eq!(r.pixel(1, rows - 1), &SUSTAIN);
        assert_eq!(r.pixel(2, rows - 2), &TINT);
        assert_eq!(r.pixel(3, rows - 2), &SUSTAIN_TINT);
        assert_eq!(r.pixel(2, rows - 1), &[0, 0, 0]);
        let plain = pianoroll(&m, &f, None);
        assert_eq!(plain.pixel(2, rows - 2), &NOTE_ON);
    }

    #[test]
    fn rest_ends_a_note() {
        let f = MelodyFormat::default();
        let m = Melody::new(vec![2, 0, 1], 16).unwrap();
        let r = pianoroll(&m, &f, None);
        assert_eq!(r.pixel(2, f.pitch_count() - 1), &[0, 0, 0]);
    }

    #[test]
    fn heatmap_scales_values() {
        let r = heatmap(&[vec![0.0, 1.0]], 0.0, 1.0, 2).unwrap();
        assert_eq!((r.width, r.height), (4, 2));
        assert_eq!(r.data, vec![0, 0, 255, 255, 0, 0, 255, 255]);
    }

    #[test]
    fn save_writes_netpbm_and_png() {
        let dir = tempfile::tempdir().unwrap();
        let r = heatmap(&[vec![0.25]], 0.0, 1.0, 1).unwrap();
        let files = r.save(dir.path().join("h")).unwrap();
        assert!(files[0].ends_with("h.pgm"));
        assert_eq!(fs::read(&files[0]).unwrap(), r.to_netpbm());
        #[cfg(feature = "png")]
        assert_eq!(&fs::read(&files[1]).unwrap()[..4], b"\x89PNG");
    }
}
