//! Synthetic corpora shared by the CLI and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use winnower_core::corpus::ManifestRecord;

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) {
    let text: String = records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    fs::write(path, text).unwrap();
}

/// Run the built binary against `project`, with `cwd` as working directory.
pub fn winnower(cwd: &Path, project: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_winnower"))
        .current_dir(cwd)
        .env_remove("WINNOWER_PROJECT")
        .arg("--project")
        .arg(project)
        .args(args)
        .output()
        .expect("binary runs")
}

/// Like `winnower`, panicking with stderr on failure; returns stdout.
pub fn winnower_ok(cwd: &Path, project: &Path, args: &[&str]) -> String {
    let out = winnower(cwd, project, args);
    assert!(
        out.status.success(),
        "winnower {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TOPICAL: [&str; 4] = [
    "rent land tenant landlord lease estate",
    "wool duties trade tariff export",
    "army navy war soldiers ships",
    "church tithe bishop clergy parish",
];

/// Twelve short debates over four topics, years 1830..1885.
pub fn twelve_docs() -> Vec<ManifestRecord> {
    (0..12)
        .map(|i| {
            let words: Vec<&str> = TOPICAL[i % 4].split(' ').collect();
            let body: Vec<&str> = (0..i + 5).map(|j| words[j % words.len()]).collect();
            ManifestRecord::inline(
                format!("d{:02}", i + 1),
                format!("Debate {}", i + 1),
                1830 + 5 * i as i32,
                format!("{} the of and", body.join(" ")),
            )
        })
        .collect()
}

pub fn two_seeds() -> Vec<ManifestRecord> {
    vec![
        ManifestRecord::inline("devon", "Devon Commission", 1845, "rent rent land tenant landlord"),
        ManifestRecord::inline("bessborough", "Bessborough Commission", 1881, "tenant lease estate rent"),
    ]
}

fn repeat(word: &str, n: usize) -> String {
    vec![word; n].join(" ")
}

/// Seed text over words s0..s9 with counts 10..1.
pub fn disagreement_seed() -> Vec<ManifestRecord> {
    let text: Vec<String> = (0..10).map(|i| repeat(&format!("s{i}"), 10 - i)).collect();
    vec![ManifestRecord::inline("seed", "Seed", 1850, text.join(" "))]
}

/// 200 documents on which KLD and JSD pick different top-1% sets.
///
/// Two "focused" documents (1841, 1843) repeat only the three commonest seed
/// words: close under JSD, heavily penalized under KLD for the seven missing
/// words. Two "broad" documents (1881, 1885) carry every seed word in seed
/// proportion diluted by 80 foreign words: close under KLD, farther under JSD.
/// The remaining 196 share few seed words and are far under both.
pub fn disagreement_corpus() -> Vec<ManifestRecord> {
    let mut out = Vec::new();
    for (i, year) in [(0, 1841), (1, 1843)] {
        let text = [repeat("s0", 100), repeat("s1", 90), repeat("s2", 80)].join(" ");
        out.push(ManifestRecord::inline(format!("focused{i}"), "Focused", year, text));
    }
    for (i, year) in [(0, 1881), (1, 1885)] {
        let mut words: Vec<String> = (0..10).map(|k| repeat(&format!("s{k}"), 10 - k)).collect();
        words.extend((0..80).map(|k| format!("broad{i}noise{k}")));
        out.push(ManifestRecord::inline(format!("broad{i}"), "Broad", year, words.join(" ")));
    }
    for d in 0..196 {
        let mut words = vec![repeat("s0", 2 + d % 3), "s3".into(), "s5".into()];
        words.extend((0..30).map(|k| format!("filler{d}w{k}")));
        out.push(ManifestRecord::inline(format!("filler{d:03}"), "Filler", 1830 + (d % 60) as i32, words.join(" ")));
    }
    out
}

/// The planted property corpus: documents, seed texts, and the ids of the
/// documents written in the property sublanguage.
pub struct PlantedCorpus {
    pub documents: Vec<ManifestRecord>,
    pub seeds: Vec<ManifestRecord>,
    pub relevant: BTreeSet<String>,
}

fn vocab(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Draw from `words` with Zipf-like weights 1/(rank+1).
fn zipf_word<'a>(rng: &mut ChaCha8Rng, words: &'a [String]) -> &'a str {
    let total: f64 = (1..=words.len()).map(|r| 1.0 / r as f64).sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in words.iter().enumerate() {
        x -= 1.0 / (i + 1) as f64;
        if x <= 0.0 {
            return w;
        }
    }
    words.last().unwrap()
}

fn mixture_text(rng: &mut ChaCha8Rng, parts: &[(&[String], f64)], len: usize) -> String {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let mut x = rng.gen::<f64>();
        let mut chosen = parts[parts.len() - 1].0;
        for (words, weight) in parts {
            if x < *weight {
                chosen = words;
                break;
            }
            x -= weight;
        }
        out.push(zipf_word(rng, chosen).to_string());
    }
    out.join(" ")
}

/// 500 documents: 40 in a property sublanguage, 160 agricultural, 300 on
/// unrelated business. The seed texts sit between property and agriculture,
/// so a first cut admits both kinds in roughly the planted 1:4 ratio.
pub fn planted_property_corpus(rng_seed: u64) -> PlantedCorpus {
    let property = vocab("prop", 30);
    let agri = vocab("agri", 30);
    let general = vocab("gen", 100);
    let other = vocab("other", 100);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut documents = Vec::new();
    let mut relevant = BTreeSet::new();
    for i in 0..500 {
        let (kind, parts): (&str, Vec<(&[String], f64)>) = if i % 25 < 2 {
            ("prop", vec![(&property, 0.45), (&agri, 0.30), (&general, 0.25)])
        } else if i % 25 < 10 {
            ("agri", vec![(&agri, 0.40), (&property, 0.30), (&general, 0.30)])
        } else {
            ("misc", vec![(&other, 0.8), (&general, 0.2)])
        };
        let id = format!("{kind}-{i:03}");
        if kind == "prop" {
            relevant.insert(id.clone());
        }
        let text = mixture_text(&mut rng, &parts, 200);
        documents.push(ManifestRecord::inline(id, format!("Debate {i}"), 1830 + (i % 70) as i32, text));
    }
    let seeds = (0..4)
        .map(|s| {
            let parts: Vec<(&[String], f64)> = vec![(&property, 0.35), (&agri, 0.40), (&general, 0.25)];
            let text = mixture_text(&mut rng, &parts, 1500);
            ManifestRecord::inline(format!("report{s}"), format!("Report {s}"), 1845, text)
        })
        .collect();
    PlantedCorpus { documents, seeds, relevant }
}

/// Every file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((p.strip_prefix(base).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    if dir.exists() {
        walk(dir, dir, &mut out);
    }
    out
}
