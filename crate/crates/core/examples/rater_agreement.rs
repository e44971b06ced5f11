//! Inter-rater agreement: ICC(3,1) on a complete matrix and Krippendorff's
//! alpha on ratings with gaps.
//!
//! ```text
//! cargo run --example rater_agreement
//! ```

use obs_core::evaluation::{icc3, krippendorff_alpha, AlphaLevel};
use obs_core::RatingMatrix;

fn main() -> anyhow::Result<()> {
    // six targets, four judges
    let csv = "item,j1,j2,j3,j4\n1,9,2,5,8\n2,6,1,3,2\n3,8,4,6,8\n4,7,1,2,6\n5,10,5,6,9\n6,6,2,4,7\n";
    let complete = RatingMatrix::from_csv(csv.as_bytes(), false)?;
    let icc = icc3(&complete)?;
    println!(
        "ICC(3,1) = {:.4} (MS rows {:.3}, MS error {:.3})",
        icc.value, icc.ms_rows, icc.ms_error
    );

    // 1-5 Likert ratings, None where a rater skipped the item
    let sparse = RatingMatrix::likert5(vec![
        vec![Some(1), Some(1), None, Some(1)],
        vec![Some(2), Some(2), Some(3), Some(2)],
        vec![Some(3), Some(3), Some(3), Some(3)],
        vec![Some(3), Some(3), Some(3), Some(3)],
        vec![Some(2), Some(2), Some(2), Some(2)],
        vec![Some(1), Some(2), Some(3), Some(4)],
        vec![Some(4), Some(4), Some(4), Some(4)],
        vec![Some(1), Some(1), Some(2), Some(1)],
        vec![Some(2), Some(2), Some(2), Some(2)],
        vec![None, Some(5), Some(5), Some(5)],
        vec![None, None, Some(1), Some(1)],
        vec![None, None, Some(3), None],
    ])?;
    for level in [AlphaLevel::Ordinal, AlphaLevel::Interval] {
        println!("alpha ({level:?}) = {:.4}", krippendorff_alpha(&sparse, level)?);
    }
    Ok(())
}
