//! WebAssembly bindings for the single-page demo in `www/`. Results cross
//! the boundary as JSON strings.

pub mod demo;

use wasm_bindgen::prelude::*;

fn to_js<T: serde::Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub struct MemoryDemo {
    inner: demo::Demo,
}

#[wasm_bindgen]
impl MemoryDemo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> MemoryDemo {
        MemoryDemo {
            inner: demo::Demo::new(),
        }
    }

    /// `Speaker: text` lines, one turn per line.
    pub fn ingest(&mut self, transcript: &str) -> Result<String, JsValue> {
        to_js(self.inner.ingest_transcript(transcript))
    }

    pub fn query(&self, query: &str, uniform: bool) -> Result<String, JsValue> {
        to_js(self.inner.query(query, uniform))
    }

    pub fn compare(&self, query: &str) -> Result<String, JsValue> {
        to_js(self.inner.compare(query))
    }

    pub fn stats(&self) -> Result<String, JsValue> {
        to_js(Ok(self.inner.stats()))
    }
}

impl Default for MemoryDemo {
    fn default() -> Self {
        Self::new()
    }
}
