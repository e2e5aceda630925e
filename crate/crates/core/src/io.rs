//! On-disk formats: weight blobs, typed arrays, PNG frames and masks,
//! landmark tracks, transform caches and CSV traces.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignTransform, FrameSequence, LandmarkTrack};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::model::{LatentCode, ParamSet};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn f32le_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn f32le_values(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidInput(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// `name.bin` next to `name.json`.
pub fn sidecar_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Weight blob: tensors concatenated as f32le, sidecar maps name → shape in blob order.
pub fn write_weight_blob(stem: &Path, params: &ParamSet) -> Result<()> {
    let (bin, json) = sidecar_paths(stem);
    let mut map = serde_json::Map::new();
    for s in params.specs() {
        map.insert(s.name.clone(), serde_json::json!(s.shape));
    }
    write_json(&json, &map)?;
    write_bytes(&bin, &f32le_bytes(params.data()))
}

pub fn read_weight_blob(stem: &Path) -> Result<ParamSet> {
    let (bin, json) = sidecar_paths(stem);
    let map: serde_json::Map<String, serde_json::Value> = read_json(&json)?;
    let values = f32le_values(&bin, &read_bytes(&bin)?)?;
    let mut params = ParamSet::new();
    let mut off = 0usize;
    for (name, shape) in map {
        let shape: Vec<usize> = serde_json::from_value(shape).map_err(|e| Error::json(&json, e))?;
        let n: usize = shape.iter().product();
        if off + n > values.len() {
            return Err(Error::InvalidInput(format!(
                "{}: blob too short for tensor `{name}`",
                bin.display()
            )));
        }
        params.push(name, &shape, values[off..off + n].to_vec())?;
        off += n;
    }
    if off != values.len() {
        return Err(Error::InvalidInput(format!(
            "{}: {} trailing values not described by the sidecar",
            bin.display(),
            values.len() - off
        )));
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub layout: String,
}

impl ArrayMeta {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        ArrayMeta {
            name: name.into(),
            shape: shape.to_vec(),
            dtype: "f32le".into(),
            layout: "row-major".into(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn write_array(stem: &Path, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    let meta = ArrayMeta::new(name, shape);
    if meta.numel() != data.len() {
        return Err(Error::Contract(format!(
            "array `{name}` has {} values for shape {shape:?}",
            data.len()
        )));
    }
    let (bin, json) = sidecar_paths(stem);
    write_json(&json, &meta)?;
    write_bytes(&bin, &f32le_bytes(data))
}

pub fn read_array(stem: &Path) -> Result<(ArrayMeta, Vec<f64>)> {
    let (bin, json) = sidecar_paths(stem);
    let meta: ArrayMeta = read_json(&json)?;
    if meta.dtype != "f32le" || meta.layout != "row-major" {
        return Err(Error::InvalidInput(format!(
            "{}: unsupported dtype/layout {}/{}",
            json.display(),
            meta.dtype,
            meta.layout
        )));
    }
    let data = f32le_values(&bin, &read_bytes(&bin)?)?;
    if data.len() != meta.numel() {
        return Err(Error::InvalidInput(format!(
            "{}: {} values for shape {:?}",
            bin.display(),
            data.len(),
            meta.shape
        )));
    }
    Ok((meta, data))
}

pub fn write_latent(stem: &Path, name: &str, w: &LatentCode) -> Result<()> {
    write_array(stem, name, &[w.layers(), w.dim()], w.data())
}

pub fn read_latent(stem: &Path) -> Result<LatentCode> {
    let (meta, data) = read_array(stem)?;
    match meta.shape[..] {
        [l, d] => LatentCode::from_vec(l, d, data),
        _ => Err(Error::InvalidInput(format!(
            "latent `{}` must be 2-D, got {:?}",
            meta.name, meta.shape
        ))),
    }
}

/// `N × L × D` stack of codes.
pub fn write_latents(stem: &Path, name: &str, codes: &[LatentCode]) -> Result<()> {
    let (l, d) = codes.first().map(LatentCode::shape).unwrap_or((0, 0));
    let data: Vec<f64> = codes.iter().flat_map(|c| c.data().iter().copied()).collect();
    write_array(stem, name, &[codes.len(), l, d], &data)
}

pub fn read_latents(stem: &Path) -> Result<Vec<LatentCode>> {
    let (meta, data) = read_array(stem)?;
    let [n, l, d] = meta.shape[..] else {
        return Err(Error::InvalidInput(format!(
            "latent stack `{}` must be 3-D, got {:?}",
            meta.name, meta.shape
        )));
    };
    if l * d == 0 {
        return Ok(Vec::new());
    }
    (0..n)
        .map(|i| LatentCode::from_vec(l, d, data[i * l * d..(i + 1) * l * d].to_vec()))
        .collect()
}

/// `N × H × W × C` stack of equally sized images.
pub fn write_images(stem: &Path, name: &str, images: &[Image]) -> Result<()> {
    let (h, w, c) = images.first().map(Image::dims).unwrap_or((0, 0, 0));
    if images.iter().any(|i| i.dims() != (h, w, c)) {
        return Err(Error::Contract("image stack members differ in shape".into()));
    }
    let data: Vec<f64> = images.iter().flat_map(|i| i.data().iter().copied()).collect();
    write_array(stem, name, &[images.len(), h, w, c], &data)
}

pub fn read_images(stem: &Path) -> Result<Vec<Image>> {
    let (meta, data) = read_array(stem)?;
    let [n, h, w, c] = meta.shape[..] else {
        return Err(Error::InvalidInput(format!(
            "image stack `{}` must be 4-D, got {:?}",
            meta.name, meta.shape
        )));
    };
    let k = h * w * c;
    (0..n)
        .map(|i| Image::from_vec(h, w, c, data[i * k..(i + 1) * k].to_vec()))
        .collect()
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let (h, w, c) = img.dims();
    let bytes: Vec<u8> = img.data().iter().map(|v| quantize(*v)).collect();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let res = match c {
        1 => image::GrayImage::from_raw(w as u32, h as u32, bytes).map(|b| b.save(path)),
        3 => image::RgbImage::from_raw(w as u32, h as u32, bytes).map(|b| b.save(path)),
        _ => return Err(Error::Contract(format!("cannot write a {c}-channel PNG"))),
    };
    res.expect("buffer length matches dims").map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads any PNG as RGB with values in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Image::from_vec(h as usize, w as usize, 3, data)
}

pub fn write_mask_png(path: &Path, m: &Mask) -> Result<()> {
    let img = Image::from_vec(
        m.height(),
        m.width(),
        1,
        m.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )?;
    write_png(path, &img)
}

/// Any non-zero luma counts as inside.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let g = img.to_luma8();
    let (w, h) = g.dimensions();
    Mask::from_vec(h as usize, w as usize, g.into_raw().into_iter().map(|b| b > 0).collect())
}

/// `000001.png` for frame index 0.
pub fn frame_file_name(index: usize) -> String {
    format!("{:06}.png", index + 1)
}

/// Frames named `NNNNNN.png`, sorted by number; numbering must be contiguous.
pub fn list_frames(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".png") {
            if stem.len() == 6 && stem.bytes().all(|b| b.is_ascii_digit()) {
                found.push((stem.parse::<usize>().expect("digits"), path));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no NNNNNN.png frames", dir.display())));
    }
    let first = found[0].0;
    if first == 0 {
        return Err(Error::InvalidInput(format!("{}: frame numbering starts at 1", dir.display())));
    }
    for (k, (n, _)) in found.iter().enumerate() {
        if *n != first + k {
            return Err(Error::InvalidInput(format!(
                "{}: frame {:06} is missing",
                dir.display(),
                first + k
            )));
        }
    }
    Ok(found)
}

pub fn read_frames_dir(dir: &Path) -> Result<FrameSequence> {
    let files = list_frames(dir)?;
    let offset = files[0].0 - 1;
    let frames = files
        .iter()
        .map(|(_, p)| read_png(p))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, offset)
}

pub fn write_frames_dir(dir: &Path, seq: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_png(&dir.join(frame_file_name(seq.index_offset + i)), f)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum LandmarkPoints {
    PerFrame(Vec<Vec<[f64; 2]>>),
    Flat(Vec<[f64; 2]>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LandmarkFile {
    num_frames: usize,
    num_landmarks: usize,
    points: LandmarkPoints,
}

/// Writes `points` as one `[x, y]` list per frame; reading also accepts a
/// flat frame-major list.
pub fn write_landmarks(path: &Path, track: &LandmarkTrack) -> Result<()> {
    let per_frame = (0..track.num_frames()).map(|i| track.frame(i).to_vec()).collect();
    write_json(
        path,
        &LandmarkFile {
            num_frames: track.num_frames(),
            num_landmarks: track.num_landmarks(),
            points: LandmarkPoints::PerFrame(per_frame),
        },
    )
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkTrack> {
    let f: LandmarkFile = read_json(path)?;
    let points = match f.points {
        LandmarkPoints::Flat(p) => p,
        LandmarkPoints::PerFrame(frames) => {
            if frames.iter().any(|fr| fr.len() != f.num_landmarks) {
                return Err(Error::InvalidInput(format!(
                    "{}: every frame needs {} landmarks",
                    path.display(),
                    f.num_landmarks
                )));
            }
            frames.concat()
        }
    };
    LandmarkTrack::new(f.num_frames, f.num_landmarks, points)
}

pub fn write_transforms(path: &Path, ts: &[AlignTransform]) -> Result<()> {
    let rows: Vec<[f64; 6]> = ts.iter().map(AlignTransform::to_row_major).collect();
    write_json(path, &rows)
}

pub fn read_transforms(path: &Path, crop_size: usize) -> Result<Vec<AlignTransform>> {
    let rows: Vec<[f64; 6]> = read_json(path)?;
    rows.into_iter()
        .map(|r| AlignTransform::from_row_major(r, crop_size))
        .collect()
}

/// CSV with a header row; numbers use Rust's shortest round-trip formatting.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_blob_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.push("b", &[2, 2], vec![1.0, -2.5, 0.25, 3.0]).unwrap();
        p.push("a", &[3], vec![0.5, 0.0, -1.0]).unwrap();
        let stem = dir.path().join("weights");
        write_weight_blob(&stem, &p).unwrap();
        let q = read_weight_blob(&stem).unwrap();
        assert_eq!(p, q);
        let side = std::fs::read_to_string(stem.with_extension("json")).unwrap();
        assert!(side.find("\"b\"").unwrap() < side.find("\"a\"").unwrap());
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 7, 3, |r, c, ch| ((r * 31 + c * 7 + ch * 3) % 256) as f64 / 255.0);
        let p = dir.path().join("000001.png");
        write_png(&p, &img).unwrap();
        assert_eq!(read_png(&p).unwrap(), img);
        let m = Mask::from_fn(4, 4, |r, c| r > c);
        let mp = dir.path().join("m.png");
        write_mask_png(&mp, &m).unwrap();
        assert_eq!(read_mask_png(&mp).unwrap(), m);
    }

    #[test]
    fn frame_listing_requires_contiguous_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::zeros(2, 2, 3);
        write_png(&dir.path().join("000001.png"), &img).unwrap();
        write_png(&dir.path().join("000003.png"), &img).unwrap();
        assert!(list_frames(dir.path()).is_err());
        write_png(&dir.path().join("000002.png"), &img).unwrap();
        assert_eq!(read_frames_dir(dir.path()).unwrap().len(), 3);
    }

    #[test]
    fn landmarks_accept_flat_points() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.json");
        std::fs::write(
            &p,
            r#"{"num_frames":1,"num_landmarks":5,"points":[[0,0],[1,0],[2,0],[3,0],[4,0]]}"#,
        )
        .unwrap();
        let t = read_landmarks(&p).unwrap();
        assert_eq!(t.frame(0)[3], [3.0, 0.0]);
        write_landmarks(&p, &t).unwrap();
        assert_eq!(read_landmarks(&p).unwrap(), t);
    }
}
