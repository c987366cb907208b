//! One human-readable summary aggregating every pipeline output, with
//! provenance (config hash and seed). Regeneration over the same outputs is
//! byte-identical; missing inputs appear as explicit gaps and make the
//! command fail.

use std::path::Path;

use crate::config::Config;
use crate::outputs::write_file;
use crate::CliError;

struct Section {
    title: &'static str,
    path: std::path::PathBuf,
    /// Rendered as-is (CSV in a code block).
    required: bool,
}

pub fn run(config: &Config) -> Result<(), CliError> {
    let fit_dir = config.fit_dir();
    let sections = vec![
        Section {
            title: "Cohort groups",
            path: config.cohort_dir().join("groups.csv"),
            required: true,
        },
        Section {
            title: "Preprocessing transform log",
            path: config.processed_dir().join("transform_log.csv"),
            required: true,
        },
        Section {
            title: "Match summary",
            path: config.match_dir().join("match_summary.csv"),
            required: true,
        },
        Section {
            title: "Post-match balance",
            path: config.match_dir().join("balance_post.csv"),
            required: true,
        },
        Section {
            title: "Class-count scan",
            path: fit_dir.join("class_scan.csv"),
            required: false,
        },
        Section {
            title: "Dimensionality test",
            path: fit_dir.join("dimension_test.csv"),
            required: false,
        },
        Section {
            title: "Normal-trait fit statistics",
            path: fit_dir.join("fit_stats.csv"),
            required: false,
        },
        Section {
            title: "Support points and class shares",
            path: fit_dir.join("support_points.csv"),
            required: false,
        },
        Section {
            title: "Item parameters",
            path: fit_dir.join("item_params.csv"),
            required: false,
        },
        Section {
            title: "Held-out validation",
            path: fit_dir.join("validation.csv"),
            required: true,
        },
        Section {
            title: "Disparity estimates",
            path: config.disparity_dir().join("disparity.csv"),
            required: true,
        },
        Section {
            title: "Class distribution by group",
            path: config.disparity_dir().join("class_distribution.csv"),
            required: true,
        },
    ];

    let mut out = String::new();
    out.push_str("# Quality and disparity pipeline report\n\n");
    out.push_str(&format!(
        "- config hash: `{}`\n- root seed: {}\n- output directory: `{}`\n\n",
        config.content_hash(),
        config.seed,
        config.out_dir.display()
    ));
    let mut gaps: Vec<String> = Vec::new();
    // A fit must exist in one family or the other.
    let has_fit = fit_dir.join("class_scan.csv").exists()
        || fit_dir.join("fit_stats.csv").exists();
    if !has_fit {
        gaps.push(format!(
            "{} (or fit_stats.csv): no fit output found",
            fit_dir.join("class_scan.csv").display()
        ));
    }
    for section in &sections {
        out.push_str(&format!("## {}\n\n", section.title));
        match read_csv_block(&section.path) {
            Some(block) => out.push_str(&block),
            None => {
                out.push_str(&format!("MISSING: `{}`\n\n", section.path.display()));
                if section.required {
                    gaps.push(section.path.display().to_string());
                }
            }
        }
    }
    if !gaps.is_empty() {
        out.push_str("## Gaps\n\n");
        for gap in &gaps {
            out.push_str(&format!("- {gap}\n"));
        }
        out.push('\n');
    }
    write_file(&config.out_dir.join("report.md"), &out)?;
    if gaps.is_empty() {
        println!("report written -> {}", config.out_dir.join("report.md").display());
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "report written with {} gap(s): {}",
            gaps.len(),
            gaps.join("; ")
        )))
    }
}

fn read_csv_block(path: &Path) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut block = String::from("```csv\n");
    // Bound very long tables in the rendered report.
    for (i, line) in text.lines().enumerate() {
        if i >= 60 {
            block.push_str("... (truncated; full file on disk)\n");
            break;
        }
        block.push_str(line);
        block.push('\n');
    }
    block.push_str("```\n\n");
    Some(block)
}
