//! Input discovery and output naming.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Files matching `pattern`, sorted. A directory stands for every file in it.
pub fn expand(pattern: &str) -> Result<Vec<PathBuf>> {
    let pattern = if Path::new(pattern).is_dir() {
        format!("{}/*", pattern.trim_end_matches('/'))
    } else {
        pattern.to_string()
    };
    let mut files: Vec<PathBuf> = glob::glob(&pattern)
        .with_context(|| format!("bad glob {pattern}"))?
        .filter_map(|p| p.ok())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no inputs matched {pattern}");
    }
    Ok(files)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

pub fn image_name(path: &Path, lossless: bool) -> String {
    format!("{}.{}", stem(path), if lossless { "pfm" } else { "png" })
}

/// Refuses to replace an existing file unless `overwrite` is set.
pub fn check_target(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        bail!("{} exists; pass --overwrite to replace it", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expands_sorted_and_rejects_empty() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["b.png", "a.png", "c.txt"] {
            std::fs::write(dir.path().join(n), b"x").unwrap();
        }
        let pat = format!("{}/*.png", dir.path().display());
        let files = expand(&pat).unwrap();
        assert_eq!(files.iter().map(|p| stem(p)).collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(expand(dir.path().to_str().unwrap()).unwrap().len(), 3);
        let err = expand(&format!("{}/*.jpg", dir.path().display())).unwrap_err();
        assert!(err.to_string().contains("no inputs matched"));
    }
}
