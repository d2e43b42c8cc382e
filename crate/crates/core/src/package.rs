//! Scene packages: a self-contained directory holding the panorama, the
//! chain trace and a manifest a rendering engine can load.
//!
//! Layout: `<out>/packages/<scene_id>/<package_id>/{panorama.png, trace.json, manifest.json}`.
//! Files are written into a hidden temporary sibling and renamed into place,
//! so a half-written package is never visible under its final name.

use std::fs;
use std::io::Cursor;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use base64::engine::general_purpose::STANDARD;
use base64::{DecodeError, Engine as _};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::digest_parts;
use crate::image::{ImageFormat, ImageResult};
use crate::metaphor::{CoTTrace, MetaphorType, SceneContext, TraceStatus};
use crate::prompt::PromptSections;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PackageError {
    #[error("invalid base64 at offset {offset}: {message}")]
    Decode { offset: usize, message: String },
    #[error("image does not decode: {0}")]
    Image(String),
    #[error("panorama must be 2:1, got {width}x{height}")]
    Aspect { width: u32, height: u32 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("path {0:?} escapes the package directory")]
    Traversal(String),
    #[error("package inconsistent: {0}")]
    Mismatch(String),
}

fn io_err(path: &Path, e: std::io::Error) -> PackageError {
    PackageError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Decodes standard padded base64, reporting the offset of the first bad byte.
pub fn decode_image(payload_b64: &str) -> Result<Vec<u8>, PackageError> {
    STANDARD.decode(payload_b64).map_err(|e| {
        let offset = match e {
            DecodeError::InvalidByte(offset, _) | DecodeError::InvalidLastSymbol(offset, _) => {
                offset
            }
            DecodeError::InvalidLength(len) => len,
            DecodeError::InvalidPadding => payload_b64.trim_end_matches('=').len(),
        };
        PackageError::Decode {
            offset,
            message: e.to_string(),
        }
    })
}

/// Fully decodes the image and returns its dimensions if it is 2:1.
pub fn validate_panorama(bytes: &[u8]) -> Result<(u32, u32), PackageError> {
    let img = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| PackageError::Image(e.to_string()))?
        .decode()
        .map_err(|e| PackageError::Image(e.to_string()))?;
    let (width, height) = (img.width(), img.height());
    if u64::from(width) != 2 * u64::from(height) {
        return Err(PackageError::Aspect { width, height });
    }
    Ok((width, height))
}

/// `hash(panorama bytes, trace_id)`.
pub fn package_id(panorama: &[u8], trace_id: &str) -> String {
    digest_parts([panorama, trace_id.as_bytes()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifestVa {
    pub valence: f64,
    pub arousal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestBackends {
    pub reasoning: String,
    pub model: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub file: String,
    pub width: u32,
    pub height: u32,
    pub format: ImageFormat,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub package_id: String,
    pub scene_id: String,
    pub va: ManifestVa,
    pub prompt: PromptSections,
    pub metaphor_types: Vec<MetaphorType>,
    pub backends: ManifestBackends,
    pub image: ManifestImage,
    pub trace_file: String,
    pub trace_id: String,
    pub created_at: String,
}

/// A written package.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePackage {
    pub package_id: String,
    pub scene_id: String,
    /// Absolute or caller-relative package directory.
    pub dir: PathBuf,
    pub panorama_file: String,
    pub manifest_file: String,
    pub trace_id: String,
    pub created_at: String,
}

impl ScenePackage {
    fn from_manifest(dir: PathBuf, m: &Manifest) -> Self {
        Self {
            package_id: m.package_id.clone(),
            scene_id: m.scene_id.clone(),
            dir,
            panorama_file: m.image.file.clone(),
            manifest_file: MANIFEST_FILE.into(),
            trace_id: m.trace_id.clone(),
            created_at: m.created_at.clone(),
        }
    }
}

/// Directory a package with this id lives in.
pub fn package_dir(out_dir: &Path, scene_id: &str, package_id: &str) -> PathBuf {
    out_dir.join("packages").join(scene_id).join(package_id)
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes a package for a successful trace. Validation happens before
/// anything touches the disk; on I/O failure the temporary directory is
/// removed. Packaging identical content again returns the existing package.
pub fn package(
    result: &ImageResult,
    trace: &CoTTrace,
    scene: &SceneContext,
    out_dir: &Path,
) -> Result<ScenePackage, PackageError> {
    scene
        .validate()
        .map_err(|e| PackageError::Manifest(e.to_string()))?;
    if trace.status != TraceStatus::Ok {
        return Err(PackageError::Manifest("trace did not complete".into()));
    }
    let prompt = trace
        .prompt
        .as_ref()
        .ok_or_else(|| PackageError::Manifest("trace has no prompt".into()))?;
    let bytes = decode_image(&result.payload_b64)?;
    let (width, height) = validate_panorama(&bytes)?;
    if (width, height) != (result.width, result.height) {
        return Err(PackageError::Mismatch(format!(
            "result declares {}x{}, image is {width}x{height}",
            result.width, result.height
        )));
    }
    let id = package_id(&bytes, &trace.trace_id);
    let final_dir = package_dir(out_dir, &scene.scene_id, &id);
    if final_dir.is_dir() {
        if let Ok(existing) = validate_package(&final_dir) {
            return Ok(existing);
        }
        fs::remove_dir_all(&final_dir).map_err(|e| io_err(&final_dir, e))?;
    }

    let panorama_file = format!("panorama.{}", result.format.extension());
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        package_id: id.clone(),
        scene_id: scene.scene_id.clone(),
        va: ManifestVa {
            valence: trace.va.valence(),
            arousal: trace.va.arousal(),
        },
        prompt: prompt.to_sections(),
        metaphor_types: trace
            .plan()
            .map(|p| p.types().collect())
            .unwrap_or_default(),
        backends: ManifestBackends {
            reasoning: trace.backend_id.clone(),
            model: trace.model_name.clone(),
            image: result.backend_id.clone(),
        },
        image: ManifestImage {
            file: panorama_file.clone(),
            width,
            height,
            format: result.format,
            seed: result.seed_used,
        },
        trace_file: TRACE_FILE.into(),
        trace_id: trace.trace_id.clone(),
        created_at: Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };

    let parent = final_dir.parent().expect("package dir has a parent");
    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    let tmp = parent.join(format!(
        ".tmp-{id}-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let write_all = || -> Result<(), PackageError> {
        fs::create_dir(&tmp).map_err(|e| io_err(&tmp, e))?;
        let write = |name: &str, data: &[u8]| {
            let p = tmp.join(name);
            fs::write(&p, data).map_err(|e| io_err(&p, e))
        };
        write(&panorama_file, &bytes)?;
        write(
            TRACE_FILE,
            &serde_json::to_vec_pretty(trace).expect("trace serializes"),
        )?;
        // The manifest goes last: a directory without one never validates.
        write(
            MANIFEST_FILE,
            &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
        )?;
        Ok(())
    };
    if let Err(e) = write_all() {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if let Err(e) = fs::rename(&tmp, &final_dir) {
        let _ = fs::remove_dir_all(&tmp);
        // A concurrent writer may have produced the same package first.
        if let Ok(existing) = validate_package(&final_dir) {
            return Ok(existing);
        }
        return Err(io_err(&final_dir, e));
    }
    Ok(ScenePackage::from_manifest(final_dir, &manifest))
}

/// Resolves a manifest-relative path, refusing anything that leaves `root`.
fn resolve(root: &Path, rel: &str) -> Result<PathBuf, PackageError> {
    let p = Path::new(rel);
    if rel.is_empty()
        || rel.contains('\\')
        || !p.components().all(|c| matches!(c, Component::Normal(_)))
    {
        return Err(PackageError::Traversal(rel.to_string()));
    }
    Ok(root.join(p))
}

/// Loads and checks a package directory: the manifest parses, every file it
/// names exists inside the directory, the panorama decodes at 2:1 with the
/// declared size, and the id matches the content.
pub fn validate_package(dir: &Path) -> Result<ScenePackage, PackageError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| PackageError::Manifest(e.to_string()))?;
    if m.manifest_version != MANIFEST_VERSION {
        return Err(PackageError::Manifest(format!(
            "unsupported manifest version {}",
            m.manifest_version
        )));
    }
    let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if dir_name != m.package_id {
        return Err(PackageError::Mismatch(format!(
            "directory {dir_name:?} does not match package id {}",
            m.package_id
        )));
    }
    let image_path = resolve(dir, &m.image.file)?;
    let trace_path = resolve(dir, &m.trace_file)?;
    let bytes = fs::read(&image_path).map_err(|e| io_err(&image_path, e))?;
    let (width, height) = validate_panorama(&bytes)?;
    if (width, height) != (m.image.width, m.image.height) {
        return Err(PackageError::Mismatch(format!(
            "manifest declares {}x{}, image is {width}x{height}",
            m.image.width, m.image.height
        )));
    }
    if ImageFormat::detect(&bytes) != Some(m.image.format) {
        return Err(PackageError::Mismatch(
            "image format differs from manifest".into(),
        ));
    }
    let trace_text = fs::read_to_string(&trace_path).map_err(|e| io_err(&trace_path, e))?;
    let trace: CoTTrace = serde_json::from_str(&trace_text)
        .map_err(|e| PackageError::Manifest(format!("trace.json: {e}")))?;
    if trace.trace_id != m.trace_id {
        return Err(PackageError::Mismatch(
            "trace id differs from manifest".into(),
        ));
    }
    if package_id(&bytes, &m.trace_id) != m.package_id {
        return Err(PackageError::Mismatch(
            "package id does not match content".into(),
        ));
    }
    Ok(ScenePackage::from_manifest(dir.to_path_buf(), &m))
}

/// Reads a package's manifest without validating the files.
pub fn read_manifest(dir: &Path) -> Result<Manifest, PackageError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| PackageError::Manifest(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affect::VaPair;
    use crate::image::{stub_generate, GenerationRequest};
    use crate::metaphor::{run_cot, CotEngine, CotPolicy, RuleEngineBackend};

    fn trace(scene: &SceneContext) -> CoTTrace {
        run_cot(
            &VaPair::new(0.854, 0.854).unwrap(),
            scene,
            &RuleEngineBackend::default(),
            &CotEngine::default(),
            &CotPolicy::default(),
        )
        .unwrap()
    }

    fn image(w: u32, h: u32) -> ImageResult {
        stub_generate(&GenerationRequest {
            width: w,
            height: h,
            panorama: false,
            ..GenerationRequest::panorama("stage", 1)
        })
        .unwrap()
    }

    #[test]
    fn decode_vectors_and_offsets() {
        assert_eq!(decode_image("aGVsbG8=").unwrap(), b"hello");
        match decode_image("aGV*bG8=").unwrap_err() {
            PackageError::Decode { offset, .. } => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn panorama_validation() {
        let ok = decode_image(&image(64, 32).payload_b64).unwrap();
        assert_eq!(validate_panorama(&ok).unwrap(), (64, 32));
        let bad = decode_image(&image(100, 99).payload_b64).unwrap();
        assert_eq!(
            validate_panorama(&bad).unwrap_err(),
            PackageError::Aspect {
                width: 100,
                height: 99
            }
        );
        assert!(matches!(
            validate_panorama(&ok[..ok.len() / 2]).unwrap_err(),
            PackageError::Image(_)
        ));
    }

    #[test]
    fn package_layout_and_idempotence() {
        let scene = SceneContext::builtin("concert").unwrap();
        let t = trace(&scene);
        let dir = tempfile::tempdir().unwrap();
        let img = image(64, 32);
        let p = package(&img, &t, &scene, dir.path()).unwrap();
        for f in ["panorama.png", "trace.json", "manifest.json"] {
            assert!(p.dir.join(f).is_file(), "{f}");
        }
        assert_eq!(p.dir, package_dir(dir.path(), "concert", &p.package_id));
        assert_eq!(validate_package(&p.dir).unwrap().package_id, p.package_id);
        let again = package(&img, &t, &scene, dir.path()).unwrap();
        assert_eq!(again.package_id, p.package_id);
        let entries = fs::read_dir(dir.path().join("packages/concert"))
            .unwrap()
            .count();
        assert_eq!(entries, 1);
    }

    #[test]
    fn square_image_writes_nothing() {
        let scene = SceneContext::builtin("gallery").unwrap();
        let t = trace(&scene);
        let dir = tempfile::tempdir().unwrap();
        let err = package(&image(32, 32), &t, &scene, dir.path()).unwrap_err();
        assert_eq!(
            err,
            PackageError::Aspect {
                width: 32,
                height: 32
            }
        );
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn traversal_and_tampering_are_rejected() {
        let scene = SceneContext::builtin("sports").unwrap();
        let t = trace(&scene);
        let dir = tempfile::tempdir().unwrap();
        let p = package(&image(64, 32), &t, &scene, dir.path()).unwrap();
        let mut m = read_manifest(&p.dir).unwrap();
        m.trace_file = "../../../etc/passwd".into();
        fs::write(p.dir.join(MANIFEST_FILE), serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(
            validate_package(&p.dir),
            Err(PackageError::Traversal(_))
        ));
        assert!(resolve(Path::new("/x"), "/abs").is_err());
        assert!(resolve(Path::new("/x"), "a/../b").is_err());
        assert!(resolve(Path::new("/x"), "panorama.png").is_ok());
    }

    #[test]
    fn incomplete_directory_does_not_validate() {
        let scene = SceneContext::builtin("sports").unwrap();
        let t = trace(&scene);
        let dir = tempfile::tempdir().unwrap();
        let p = package(&image(64, 32), &t, &scene, dir.path()).unwrap();
        fs::remove_file(p.dir.join(MANIFEST_FILE)).unwrap();
        assert!(validate_package(&p.dir).is_err());
    }
}
