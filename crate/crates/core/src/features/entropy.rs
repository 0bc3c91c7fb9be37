use crate::package::PackageArtifact;
use crate::Scalar;

/// Shannon entropy of a byte string in bits per byte, in `[0, 8]`.
pub fn shannon_entropy<T: Scalar>(content: &[u8]) -> T {
    if content.is_empty() {
        return T::zero();
    }
    let mut histogram = [0usize; 256];
    for &b in content {
        histogram[b as usize] += 1;
    }
    let n = T::of_usize(content.len());
    let h: T = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = T::of_usize(c) / n;
            -p * p.log2()
        })
        .sum();
    // a single symbol yields -0.0
    h.max(T::zero())
}

/// Mean and population standard deviation of the per-file entropy over
/// every file of the artifact.
pub fn entropy_stats<T: Scalar>(artifact: &PackageArtifact) -> (T, T) {
    let values: Vec<T> = artifact
        .files
        .iter()
        .map(|f| shannon_entropy(&f.content))
        .collect();
    mean_and_std(&values)
}

pub(crate) fn mean_and_std<T: Scalar>(values: &[T]) -> (T, T) {
    if values.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = T::of_usize(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<T>()
        / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::package::{FileEntry, Manifest};

    #[test]
    fn reference_values() {
        let uniform: Vec<u8> = (0..=255u8).collect();
        assert!((shannon_entropy::<f64>(&uniform) - 8.0).abs() < 1e-12);
        assert_eq!(shannon_entropy::<f64>(&[7u8; 1024]), 0.0);
        assert!((shannon_entropy::<f64>(b"aabb") - 1.0).abs() < 1e-12);
        assert_eq!(shannon_entropy::<f64>(b""), 0.0);
        assert!((shannon_entropy::<f32>(&uniform) - 8.0).abs() < 1e-5);
    }

    #[test]
    fn stats_degenerate_cases() {
        assert_eq!(mean_and_std::<f64>(&[]), (0.0, 0.0));
        assert_eq!(mean_and_std(&[2.5f64]), (2.5, 0.0));
        let (m, s) = mean_and_std(&[2.0f64, 4.0]);
        assert!((m - 3.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stats_cover_all_files() {
        let manifest = Manifest::parse(br#"{"name":"a","version":"1.0.0"}"#).unwrap();
        // entropy 2.0 ("abcd") and 4.0 (16 distinct bytes)
        let files = vec![
            FileEntry::new("a.bin", b"abcd".to_vec()),
            FileEntry::new("README", (0u8..16).collect::<Vec<_>>()),
        ];
        let a = PackageArtifact::from_parts(manifest, files);
        let (m, s): (f64, f64) = entropy_stats(&a);
        assert!((m - 3.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }
}
