//! wasm-bindgen bindings for the demo page in `www/`.
//!
//! Every export returns JSON strings; errors become thrown JS strings.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js(e: String) -> JsValue {
    JsValue::from_str(&e)
}

#[wasm_bindgen(js_name = demoVocabulary)]
pub fn demo_vocabulary() -> String {
    demo::demo_vocabulary()
}

/// Token masks for one format over one vocabulary.
#[wasm_bindgen]
pub struct MaskExplorer(demo::Explorer);

#[wasm_bindgen]
impl MaskExplorer {
    /// `format` is a preset name or a pattern.
    #[wasm_bindgen(constructor)]
    pub fn new(vocab_json: &str, format: &str) -> Result<MaskExplorer, JsValue> {
        demo::Explorer::new(vocab_json, format)
            .map(MaskExplorer)
            .map_err(js)
    }

    #[wasm_bindgen(js_name = stateCount)]
    pub fn state_count(&self) -> usize {
        self.0.state_count()
    }

    #[wasm_bindgen(js_name = vocabSize)]
    pub fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    pub fn view(&self, state: u32) -> Result<String, JsValue> {
        self.0.view(state).map_err(js)
    }

    pub fn advance(&self, state: u32, token: u32) -> Result<String, JsValue> {
        self.0.advance(state, token).map_err(js)
    }

    #[wasm_bindgen(js_name = packedMask)]
    pub fn packed_mask(&self, state: u32) -> Result<Vec<u8>, JsValue> {
        self.0.packed_mask(state).map_err(js)
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String, JsValue> {
        self.0.detokenize(ids).map_err(js)
    }
}

#[wasm_bindgen]
pub fn reward(
    preset: &str,
    letter: &str,
    content: &str,
    generation: &str,
) -> Result<String, JsValue> {
    demo::reward(preset, letter, content, generation).map_err(js)
}

#[wasm_bindgen]
pub fn balance(
    counts: &str,
    theta: f64,
    mode: &str,
    formula: &str,
    seed: u64,
) -> Result<String, JsValue> {
    demo::balance(counts, theta, mode, formula, seed).map_err(js)
}
