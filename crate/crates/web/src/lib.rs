//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Images cross the boundary as RGBA bytes ready for `ImageData`.

use docenhance::data_io::{synthesize_pair, SynthSpec};
use docenhance::metrics::{binarize, BinaryImage, MetricsReport};
use docenhance::model::init_model;
use docenhance::training::Checkpoint;
use docenhance::{ImageBuffer, ModelConfig, ModelWeights};
use wasm_bindgen::prelude::*;

/// Model used when no checkpoint is uploaded: small enough to run
/// interactively, same 64px window as the desk-scale training setup.
pub const DEMO_LAYERS: usize = 4;
pub const DEMO_DIM: usize = 64;
pub const DEMO_HEADS: usize = 4;
pub const DEMO_PATCH: usize = 8;
pub const DEMO_WINDOW: usize = 64;

fn js(e: docenhance::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `[0,1]` image (1 or 3 channels) to opaque RGBA bytes.
pub fn to_rgba(img: &ImageBuffer) -> Vec<u8> {
    let byte = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let c = img.channels();
    img.data()
        .chunks_exact(c)
        .flat_map(|px| {
            if c >= 3 {
                [byte(px[0]), byte(px[1]), byte(px[2]), 255]
            } else {
                let g = byte(px[0]);
                [g, g, g, 255]
            }
        })
        .collect()
}

/// Attention weights rendered with a dark-to-warm ramp, scaled to the map's maximum.
pub fn heat_rgba(map: &ImageBuffer) -> Vec<u8> {
    let peak = map.data().iter().copied().fold(0f32, f32::max).max(1e-12);
    map.data()
        .iter()
        .flat_map(|&v| {
            let t = v / peak;
            let r = (255.0 * (1.5 * t).min(1.0)) as u8;
            let g = (255.0 * (1.5 * t - 0.5).clamp(0.0, 1.0)) as u8;
            let b = (255.0 * (3.0 * t - 2.0).clamp(0.0, 1.0)) as u8;
            [r, g, b, 255]
        })
        .collect()
}

/// A synthetic degraded page with its clean ground truth.
#[wasm_bindgen]
pub struct Page {
    degraded: ImageBuffer,
    clean: BinaryImage,
}

#[wasm_bindgen]
impl Page {
    #[allow(clippy::too_many_arguments)]
    #[wasm_bindgen(constructor)]
    pub fn new(
        height: usize,
        width: usize,
        seed: u32,
        stain: f32,
        saltpepper: f32,
        blur: f32,
        bleed: f32,
        density: f32,
    ) -> Result<Page, JsError> {
        let spec = SynthSpec {
            height,
            width,
            stroke_density: density,
            stain,
            saltpepper,
            blur,
            bleed,
            seed: seed.into(),
        };
        let (degraded, clean) = synthesize_pair(&spec).map_err(js)?;
        Ok(Page { degraded, clean })
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.degraded.height()
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.degraded.width()
    }

    pub fn degraded_rgba(&self) -> Vec<u8> {
        to_rgba(&self.degraded)
    }

    pub fn clean_rgba(&self) -> Vec<u8> {
        to_rgba(&self.clean.to_image())
    }

    /// Global threshold on the degraded page: pixels at or below become ink.
    pub fn threshold_rgba(&self, threshold: f32) -> Vec<u8> {
        to_rgba(&binarize(&self.degraded.to_gray(), threshold).to_image())
    }

    /// Scores a global threshold of the degraded page against the clean page.
    pub fn score_threshold(&self, threshold: f32) -> Result<Scores, JsError> {
        let pred = binarize(&self.degraded.to_gray(), threshold);
        Scores::of(&pred, &self.clean)
    }
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Scores {
    report: MetricsReport,
}

impl Scores {
    fn of(pred: &BinaryImage, gt: &BinaryImage) -> Result<Scores, JsError> {
        let report = MetricsReport::compute(pred, gt).map_err(js)?;
        Ok(Scores { report })
    }
}

#[wasm_bindgen]
impl Scores {
    #[wasm_bindgen(getter)]
    pub fn psnr(&self) -> f64 {
        self.report.psnr
    }

    #[wasm_bindgen(getter)]
    pub fn fm(&self) -> f64 {
        self.report.fm
    }

    #[wasm_bindgen(getter)]
    pub fn fps(&self) -> f64 {
        self.report.fps
    }

    #[wasm_bindgen(getter)]
    pub fn drd(&self) -> f64 {
        self.report.drd
    }
}

/// A model for enhancement and attention maps, random or from a checkpoint.
#[wasm_bindgen]
pub struct Model {
    weights: ModelWeights<f32>,
    step: usize,
}

#[wasm_bindgen]
impl Model {
    pub fn random(seed: u32) -> Result<Model, JsError> {
        let cfg = ModelConfig::new(DEMO_LAYERS, DEMO_DIM, DEMO_HEADS, DEMO_PATCH, DEMO_WINDOW)
            .map_err(js)?;
        let weights = init_model(&cfg, seed.into()).map_err(js)?;
        Ok(Model { weights, step: 0 })
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Model, JsError> {
        let ckpt = Checkpoint::from_bytes(bytes).map_err(js)?;
        Ok(Model {
            step: ckpt.step,
            weights: ckpt.weights,
        })
    }

    pub fn describe(&self) -> String {
        let c = self.weights.config();
        format!(
            "L={} D={} H={} p={} S={}, {} parameters, trained {} steps",
            c.layers,
            c.dim,
            c.heads,
            c.patch_size,
            c.window_size,
            self.weights.param_count(),
            self.step
        )
    }

    #[wasm_bindgen(getter)]
    pub fn layers(&self) -> usize {
        self.weights.config().layers
    }

    #[wasm_bindgen(getter)]
    pub fn heads(&self) -> usize {
        self.weights.config().heads
    }

    /// Token grid side within one window.
    #[wasm_bindgen(getter)]
    pub fn grid(&self) -> usize {
        let c = self.weights.config();
        c.window_size / c.patch_size
    }

    #[wasm_bindgen(getter)]
    pub fn window(&self) -> usize {
        self.weights.config().window_size
    }

    /// Model output for the whole page as grayscale RGBA.
    pub fn enhance(&self, page: &Page) -> Result<Vec<u8>, JsError> {
        let out = self.weights.enhance_page(&page.degraded, 4).map_err(js)?;
        Ok(to_rgba(&out))
    }

    /// Scores the thresholded model output against the clean page.
    pub fn score(&self, page: &Page, threshold: f32) -> Result<Scores, JsError> {
        let out = self.weights.enhance_page(&page.degraded, 4).map_err(js)?;
        Scores::of(&binarize(&out, threshold), &page.clean)
    }

    /// Attention of `token` over the top-left window of the page, as an S×S heat map.
    pub fn attention(
        &self,
        page: &Page,
        layer: usize,
        head: usize,
        token: usize,
    ) -> Result<Vec<u8>, JsError> {
        let window = first_window(&page.degraded, self.window()).map_err(js)?;
        let maps = self
            .weights
            .attention_maps(&window, layer, head, &[token])
            .map_err(js)?;
        Ok(heat_rgba(&maps[0]))
    }

    /// The window the attention maps are computed on, as RGBA.
    pub fn attention_window(&self, page: &Page) -> Result<Vec<u8>, JsError> {
        Ok(to_rgba(
            &first_window(&page.degraded, self.window()).map_err(js)?,
        ))
    }
}

/// Top-left `S×S` window, padded white when the page is smaller.
pub fn first_window(page: &ImageBuffer, window: usize) -> docenhance::Result<ImageBuffer> {
    let (padded, grid) = docenhance::patching::pad_to_grid(page, window)?;
    let (y, x) = grid.origins().next().unwrap_or((0, 0));
    padded.crop(y, x, window, window)
}
