//! Instruction-LLM client interface, prompt assets and bounded parallel dispatch.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{ClientError, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    /// Pinned to 0 for detection; clients that cannot honour it ignore it.
    pub temperature: f32,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn model_name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError>;
}

/// Client that replays a fixed script of outputs, one per call.
#[derive(Debug)]
pub struct ScriptedLlmClient {
    name: String,
    script: Mutex<VecDeque<Result<String, ClientError>>>,
    prompts: Mutex<Vec<String>>,
    repeat_last: bool,
}

impl ScriptedLlmClient {
    pub fn new(name: impl Into<String>, outputs: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            name: name.into(),
            script: Mutex::new(outputs.into_iter().map(|s| Ok(s.into())).collect()),
            prompts: Mutex::new(Vec::new()),
            repeat_last: false,
        }
    }

    pub fn from_results(
        name: impl Into<String>,
        outputs: impl IntoIterator<Item = Result<String, ClientError>>,
    ) -> Self {
        Self {
            name: name.into(),
            script: Mutex::new(outputs.into_iter().collect()),
            prompts: Mutex::new(Vec::new()),
            repeat_last: false,
        }
    }

    /// Keep returning the final scripted output once the script runs out.
    pub fn repeating(mut self) -> Self {
        self.repeat_last = true;
        self
    }

    /// Prompts received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl LlmClient for ScriptedLlmClient {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        let mut script = self.script.lock().unwrap();
        if self.repeat_last && script.len() == 1 {
            return script.front().cloned().unwrap();
        }
        script.pop_front().unwrap_or(Err(ClientError::Exhausted))
    }
}

/// Client backed by a closure over the prompt.
pub struct FnLlmClient<F> {
    name: String,
    f: F,
}

impl<F> FnLlmClient<F>
where
    F: Fn(&str) -> Result<String, ClientError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> LlmClient for FnLlmClient<F>
where
    F: Fn(&str) -> Result<String, ClientError> + Send + Sync,
{
    fn model_name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ClientError> {
        (self.f)(&request.prompt)
    }
}

/// A versioned prompt template with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAsset {
    pub id: String,
    pub version: u32,
    pub template: String,
}

impl PromptAsset {
    pub fn new(id: impl Into<String>, version: u32, template: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            version,
            template: template.into(),
        }
    }

    /// Load from a file named `<id>-v<version>.txt`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let template = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::precondition(format!("bad prompt file name {}", path.display())))?;
        let (id, version) = stem
            .rsplit_once("-v")
            .and_then(|(id, v)| v.parse::<u32>().ok().map(|v| (id.to_string(), v)))
            .ok_or_else(|| {
                Error::precondition(format!("prompt file {stem} is not named <id>-v<version>"))
            })?;
        Ok(Self::new(id, version, template))
    }

    /// Identifier recorded in record metadata, e.g. `insertion-v1`.
    pub fn tag(&self) -> String {
        format!("{}-v{}", self.id, self.version)
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.template.clone();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}

pub mod assets {
    use super::PromptAsset;

    pub fn vocabulary() -> PromptAsset {
        PromptAsset::new("vocabulary", 1, include_str!("../assets/prompts/vocabulary-v1.txt"))
    }

    pub fn shortlist() -> PromptAsset {
        PromptAsset::new("shortlist", 1, include_str!("../assets/prompts/shortlist-v1.txt"))
    }

    pub fn insertion() -> PromptAsset {
        PromptAsset::new("insertion", 1, include_str!("../assets/prompts/insertion-v1.txt"))
    }

    pub fn detect_full() -> PromptAsset {
        PromptAsset::new("detect-full", 1, include_str!("../assets/prompts/detect-full-v1.txt"))
    }

    pub fn detect_reduced() -> PromptAsset {
        PromptAsset::new(
            "detect-reduced",
            1,
            include_str!("../assets/prompts/detect-reduced-v1.txt"),
        )
    }
}

/// Apply `f` to every item with at most `limit` calls in flight.
/// Results come back in input order regardless of completion order.
pub fn map_bounded<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let limit = limit.max(1).min(items.len().max(1));
    if limit == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..limit {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_placeholders() {
        let p = PromptAsset::new("x", 2, "Q: {{query}} / {{query}} ({{topic}})");
        assert_eq!(p.render(&[("query", "cars"), ("topic", "car")]), "Q: cars / cars (car)");
        assert_eq!(p.tag(), "x-v2");
    }

    #[test]
    fn bundled_assets_carry_placeholders() {
        assert!(assets::insertion().template.contains("{{item}}"));
        assert!(assets::detect_full().template.contains("{{response}}"));
        assert!(!assets::detect_reduced().template.contains("passages"));
    }

    #[test]
    fn scripted_client_replays_then_exhausts() {
        let c = ScriptedLlmClient::new("m", ["a", "b"]);
        let req = CompletionRequest::new("p");
        assert_eq!(c.complete(&req).unwrap(), "a");
        assert_eq!(c.complete(&req).unwrap(), "b");
        assert_eq!(c.complete(&req), Err(ClientError::Exhausted));
        assert_eq!(c.prompts().len(), 3);
    }

    #[test]
    fn map_bounded_preserves_order() {
        let items: Vec<u64> = (0..50).collect();
        let out = map_bounded(&items, 4, |_, x| {
            std::thread::sleep(std::time::Duration::from_micros((50 - x) * 20));
            x * 2
        });
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn prompt_file_name_encodes_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("insertion-v3.txt");
        std::fs::write(&path, "{{item}}").unwrap();
        let p = PromptAsset::from_file(&path).unwrap();
        assert_eq!((p.id.as_str(), p.version), ("insertion", 3));
    }
}
