//! Toy faces in the browser. The page drives three operations on one
//! [`Demo`]: sample and render a face, edit it along a toy direction, and
//! stitch the edit back with a short tuning run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use stitchpipe::alignment::AlignTransform;
use stitchpipe::editing::EditDirection;
use stitchpipe::image::Image;
use stitchpipe::model::{Generator, GeneratorWeights, LatentCode, Segmenter};
use stitchpipe::stitching::{composite, naive_paste, run_stitch_tuning, stitch_losses, MaskSet, StitchConfig};
use stitchpipe::toy::directions::toy_directions;
use stitchpipe::toy::generator::{sample_styles, ToyGenerator, RESOLUTION};
use stitchpipe::toy::segmenter::ToySegmenter;

// Plain strings cross into JS as exceptions and stay usable in native tests.
fn js_err(e: stitchpipe::Error) -> String {
    e.to_string()
}

/// RGBA bytes for a canvas `ImageData`.
fn rgba(img: &Image) -> Vec<u8> {
    let c = img.channels();
    let mut out = Vec::with_capacity(img.height() * img.width() * 4);
    for px in img.data().chunks(c) {
        for ch in 0..3 {
            out.push((px[ch.min(c - 1)].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

struct Edit {
    code: LatentCode,
    image: Image,
    masks: MaskSet,
}

#[wasm_bindgen]
pub struct Demo {
    generator: ToyGenerator,
    theta0: GeneratorWeights,
    directions: Vec<EditDirection>,
    segmenter: ToySegmenter,
    code: LatentCode,
    original: Image,
    edit: Option<Edit>,
    lb: (f64, f64),
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Demo, String> {
        let (generator, theta0) = ToyGenerator::new(seed as u64);
        let directions = toy_directions(&generator).map_err(js_err)?;
        let code = generator.mean_code();
        let original = generator.generate(&code, &theta0).map_err(js_err)?;
        Ok(Demo {
            generator,
            theta0,
            directions,
            segmenter: ToySegmenter::default(),
            code,
            original,
            edit: None,
            lb: (0.0, 0.0),
        })
    }

    pub fn size(&self) -> usize {
        RESOLUTION
    }

    pub fn direction_names(&self) -> Vec<String> {
        self.directions.iter().map(|d| d.name.clone()).collect()
    }

    /// Draw a random face and return it as RGBA.
    pub fn sample(&mut self, face_seed: u32) -> Result<Vec<u8>, String> {
        let styles = sample_styles(&mut ChaCha8Rng::seed_from_u64(face_seed as u64));
        self.code = self.generator.map_styles(&styles);
        self.original = self.generator.generate(&self.code, &self.theta0).map_err(js_err)?;
        self.edit = None;
        Ok(rgba(&self.original))
    }

    /// Edit the current face and return the edited image as RGBA.
    pub fn edit(&mut self, direction: &str, strength: f64, dilation: usize) -> Result<Vec<u8>, String> {
        let d = self
            .directions
            .iter()
            .find(|d| d.name == direction)
            .ok_or_else(|| format!("unknown direction `{direction}`"))?;
        let code = d.apply(&self.code, strength).map_err(js_err)?;
        let image = self.generator.generate(&code, &self.theta0).map_err(js_err)?;
        let masks = MaskSet::from_segmentation(self.segmenter.segment(&image), dilation.max(1)).map_err(js_err)?;
        let out = rgba(&image);
        self.edit = Some(Edit { code, image, masks });
        Ok(out)
    }

    /// Face mask in white, the boundary band in orange.
    pub fn mask_overlay(&self) -> Result<Vec<u8>, String> {
        let e = self.current_edit()?;
        let (m, b) = (&e.masks.m, &e.masks.b);
        let mut out = Vec::with_capacity(m.count() * 4);
        for (&inside, &band) in m.data().iter().zip(b.data()) {
            let px: [u8; 4] = match (inside, band) {
                (true, _) => [235, 235, 235, 255],
                (_, true) => [240, 140, 40, 255],
                _ => [25, 25, 30, 255],
            };
            out.extend_from_slice(&px);
        }
        Ok(out)
    }

    pub fn face_area(&self) -> Result<usize, String> {
        Ok(self.current_edit()?.masks.m.count())
    }

    /// The edit pasted inside its mask, without tuning.
    pub fn naive(&self) -> Result<Vec<u8>, String> {
        let e = self.current_edit()?;
        let t = AlignTransform::identity(RESOLUTION);
        Ok(rgba(&naive_paste(&e.image, &self.original, &t, &e.masks.m).map_err(js_err)?))
    }

    /// Tune the generator to blend the boundary, then composite through the
    /// dilated mask.
    pub fn stitch(&mut self, iterations: usize, feather: f64) -> Result<Vec<u8>, String> {
        let e = self.current_edit()?;
        let cfg = StitchConfig {
            iterations: iterations.max(1),
            feather_sigma: feather.max(0.0),
            ..StitchConfig::default()
        };
        let r = run_stitch_tuning(&self.generator, &self.theta0, &e.code, &self.original, &e.image, &e.masks, &cfg)
            .map_err(js_err)?;
        let t = AlignTransform::identity(RESOLUTION);
        let out = composite(&r.s, &self.original, &t, &e.masks.m_d, cfg.feather_sigma).map_err(js_err)?;
        self.lb = (r.initial().l_b, r.last().l_b);
        Ok(rgba(&out))
    }

    /// Boundary loss before and after the last stitching run.
    pub fn boundary_loss(&self) -> Vec<f64> {
        vec![self.lb.0, self.lb.1]
    }

    /// Boundary loss of the untuned edit against the original.
    pub fn naive_boundary_loss(&self) -> Result<f64, String> {
        let e = self.current_edit()?;
        Ok(stitch_losses(&e.image, &self.original, &e.image, &e.masks).map_err(js_err)?.0)
    }
}

impl Demo {
    fn current_edit(&self) -> Result<&Edit, String> {
        self.edit.as_ref().ok_or_else(|| "edit the face first".to_string())
    }

    #[cfg(test)]
    fn mask(&self) -> &stitchpipe::image::Mask {
        &self.edit.as_ref().expect("edited").masks.m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_edit_and_stitch() {
        let mut d = Demo::new(7).unwrap();
        let n = d.size();
        assert_eq!(d.sample(3).unwrap().len(), n * n * 4);
        let before = d.original.clone();
        d.edit("grow_radius", 0.0, 2).unwrap();
        let area0 = d.face_area().unwrap();
        d.edit("grow_radius", 1.0, 2).unwrap();
        assert!(d.face_area().unwrap() > area0);
        assert!(d.mask().count() > 0);
        assert_eq!(d.mask_overlay().unwrap().len(), n * n * 4);
        assert_eq!(d.naive().unwrap().len(), n * n * 4);
        d.stitch(20, 1.0).unwrap();
        let [a, b] = d.boundary_loss()[..] else { panic!() };
        assert!(b < a);
        assert_eq!(d.original, before);
    }

    #[test]
    fn unknown_direction_is_an_error() {
        let mut d = Demo::new(1).unwrap();
        assert!(d.edit("frown", 1.0, 2).is_err());
    }
}
