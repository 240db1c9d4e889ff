//! MNIST IDX ingestion, vectorization, and seeded task sampling.
//!
//! The IDX container is the classic MNIST layout: a big-endian magic number,
//! big-endian counts, then raw bytes. Paths ending in `.gz` are decompressed
//! transparently. Images that are entirely zero cannot be normalized; the
//! pool drops them from its per-digit index lists at load time, so sampling
//! only ever sees usable images.
//!
//! Sampling is a pure function of (root seed, digit, n_size, replication):
//! every experiment cell derives its own RNG seed, so any single cell can be
//! reproduced without replaying the rest of the matrix.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{CoreError, Dataset, Label, Observation, ObjectVector, SplitQuadruple};

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;
const IMAGE_ROWS: u32 = 28;
const IMAGE_COLS: u32 = 28;
const IMAGE_BYTES: usize = (IMAGE_ROWS * IMAGE_COLS) as usize;

/// Errors from file ingestion and task sampling.
#[derive(Error, Debug)]
pub enum DataError {
    #[error("cannot read {file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: io::Error,
    },
    /// The file does not start with the expected IDX magic number.
    #[error("{file} at offset {offset}: magic {actual}, expected {expected}")]
    BadMagic {
        file: PathBuf,
        offset: u64,
        expected: u32,
        actual: u32,
    },
    /// The image dimensions in the header are not 28 x 28.
    #[error("{file} at offset {offset}: image size {rows}x{cols}, expected 28x28")]
    DimensionMismatch {
        file: PathBuf,
        offset: u64,
        rows: u32,
        cols: u32,
    },
    /// The image and label files disagree on the item count.
    #[error("{images_file} has {images} images but {labels_file} has {labels} labels")]
    CountMismatch {
        images_file: PathBuf,
        labels_file: PathBuf,
        images: usize,
        labels: usize,
    },
    /// The file ends before the advertised payload.
    #[error("{file} truncated at offset {offset}: {missing} byte(s) missing")]
    TruncatedFile {
        file: PathBuf,
        offset: u64,
        missing: u64,
    },
    /// A label byte is outside the digit range.
    #[error("{file} at offset {offset}: label {value} outside 0..=9")]
    InvalidLabel {
        file: PathBuf,
        offset: u64,
        value: u8,
    },
    /// An all-zero image cannot be scaled to unit norm.
    #[error("image has no nonzero pixel")]
    ZeroImage,
    /// The pool cannot supply the requested draw.
    #[error(
        "digit {digit} needs {needed} usable images per class, pool has \
         {positives} positives and {negatives} negatives"
    )]
    InsufficientData {
        digit: u8,
        needed: usize,
        positives: usize,
        negatives: usize,
    },
    #[error("digit {digit} outside 0..=9")]
    InvalidDigit { digit: u8 },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// The full MNIST image pool with per-digit index lists.
#[derive(Debug)]
pub struct MnistPool {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    by_digit: [Vec<u32>; 10],
    blank: usize,
}

impl MnistPool {
    /// Loads an IDX image file and its companion label file.
    pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Self, DataError> {
        let images_raw = read_maybe_gz(images_path)?;
        let labels_raw = read_maybe_gz(labels_path)?;

        let mut images = SliceReader::new(&images_raw, images_path);
        let magic = images.read_u32()?;
        if magic != IMAGES_MAGIC {
            return Err(DataError::BadMagic {
                file: images_path.to_owned(),
                offset: 0,
                expected: IMAGES_MAGIC,
                actual: magic,
            });
        }
        let image_count = images.read_u32()? as usize;
        let dims_offset = images.pos as u64;
        let rows = images.read_u32()?;
        let cols = images.read_u32()?;
        if rows != IMAGE_ROWS || cols != IMAGE_COLS {
            return Err(DataError::DimensionMismatch {
                file: images_path.to_owned(),
                offset: dims_offset,
                rows,
                cols,
            });
        }
        let pixels = images.take(image_count * IMAGE_BYTES)?.to_vec();

        let mut labels = SliceReader::new(&labels_raw, labels_path);
        let magic = labels.read_u32()?;
        if magic != LABELS_MAGIC {
            return Err(DataError::BadMagic {
                file: labels_path.to_owned(),
                offset: 0,
                expected: LABELS_MAGIC,
                actual: magic,
            });
        }
        let label_count = labels.read_u32()? as usize;
        if label_count != image_count {
            return Err(DataError::CountMismatch {
                images_file: images_path.to_owned(),
                labels_file: labels_path.to_owned(),
                images: image_count,
                labels: label_count,
            });
        }
        let label_payload_offset = labels.pos as u64;
        let label_bytes = labels.take(label_count)?.to_vec();
        if let Some(bad) = label_bytes.iter().position(|&v| v > 9) {
            return Err(DataError::InvalidLabel {
                file: labels_path.to_owned(),
                offset: label_payload_offset + bad as u64,
                value: label_bytes[bad],
            });
        }

        let mut by_digit: [Vec<u32>; 10] = Default::default();
        let mut blank = 0;
        for (index, &digit) in label_bytes.iter().enumerate() {
            let start = index * IMAGE_BYTES;
            if pixels[start..start + IMAGE_BYTES].iter().all(|&p| p == 0) {
                blank += 1;
            } else {
                by_digit[digit as usize].push(index as u32);
            }
        }
        Ok(Self {
            pixels,
            labels: label_bytes,
            by_digit,
            blank,
        })
    }

    /// Total number of images, blank ones included.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Raw pixel block of one image.
    pub fn image(&self, index: usize) -> &[u8; IMAGE_BYTES] {
        let start = index * IMAGE_BYTES;
        self.pixels[start..start + IMAGE_BYTES]
            .try_into()
            .expect("image block has fixed size")
    }

    pub fn label(&self, index: usize) -> u8 {
        self.labels[index]
    }

    /// Usable (non-blank) images of one digit.
    pub fn digit_count(&self, digit: u8) -> usize {
        self.by_digit[digit as usize].len()
    }

    /// Images dropped at load time because every pixel was zero.
    pub fn blank_count(&self) -> usize {
        self.blank
    }
}

/// Scales pixels to [0, 1], flattens row-major, and normalizes to unit norm.
pub fn vectorize(pixels: &[u8; IMAGE_BYTES]) -> Result<ObjectVector, DataError> {
    if pixels.iter().all(|&p| p == 0) {
        return Err(DataError::ZeroImage);
    }
    let scaled: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(ObjectVector::normalized(scaled)?)
}

/// Coordinates of one experiment cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    /// The positive class digit.
    pub digit: u8,
    /// Each of the four datasets holds n_size positives and n_size negatives.
    pub n_size: usize,
    /// Root seed of the whole experiment.
    pub seed: u64,
    pub replication: u32,
}

/// Splitmix-style finalizer: bijective, well-mixing.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the RNG seed of one cell from the root seed and the cell
/// coordinates.
pub fn derive_seed(root: u64, digit: u8, n_size: usize, replication: u32) -> u64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut state = root;
    for coordinate in [digit as u64, n_size as u64, replication as u64] {
        state = mix(state.wrapping_add(GAMMA).wrapping_add(coordinate));
    }
    state
}

/// Partial Fisher-Yates: the first `count` entries of a seeded shuffle of
/// `source`, drawn without replacement.
fn draw_without_replacement(rng: &mut ChaCha8Rng, source: &[u32], count: usize) -> Vec<u32> {
    let mut indices = source.to_vec();
    for i in 0..count {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices
}

/// Draws one balanced binary task: 4 x n_size positives (images of the
/// digit, label One) and 4 x n_size negatives (images of any other digit,
/// label Zero), all distinct pool images, partitioned into the four split
/// datasets in draw order.
pub fn sample_task(pool: &MnistPool, spec: &TaskSpec) -> Result<SplitQuadruple, DataError> {
    if spec.digit > 9 {
        return Err(DataError::InvalidDigit { digit: spec.digit });
    }
    let needed = 4 * spec.n_size;
    let positives = &pool.by_digit[spec.digit as usize];
    let negatives: Vec<u32> = (0..10)
        .filter(|&d| d != spec.digit as usize)
        .flat_map(|d| pool.by_digit[d].iter().copied())
        .collect();
    if positives.len() < needed || negatives.len() < needed {
        return Err(DataError::InsufficientData {
            digit: spec.digit,
            needed,
            positives: positives.len(),
            negatives: negatives.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        spec.seed,
        spec.digit,
        spec.n_size,
        spec.replication,
    ));
    let positive_draw = draw_without_replacement(&mut rng, positives, needed);
    let negative_draw = draw_without_replacement(&mut rng, &negatives, needed);

    let mut parts: Vec<Dataset> = Vec::with_capacity(4);
    for part in 0..4 {
        let mut items = Vec::with_capacity(2 * spec.n_size);
        for offset in 0..spec.n_size {
            let positive = positive_draw[part * spec.n_size + offset] as usize;
            items.push(Observation::new(vectorize(pool.image(positive))?, Label::One));
            let negative = negative_draw[part * spec.n_size + offset] as usize;
            items.push(Observation::new(vectorize(pool.image(negative))?, Label::Zero));
        }
        parts.push(Dataset::new(items));
    }
    let test = parts.pop().expect("four parts were built");
    let pre_test = parts.pop().expect("four parts were built");
    let pre_pre_test = parts.pop().expect("four parts were built");
    let pre_pre_train = parts.pop().expect("four parts were built");
    Ok(SplitQuadruple::new(
        pre_pre_train,
        pre_pre_test,
        pre_test,
        test,
    )?)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let io_err = |source| DataError::Io {
        file: path.to_owned(),
        source,
    };
    if path.extension().is_some_and(|ext| ext == "gz") {
        let file = File::open(path).map_err(io_err)?;
        let mut decoder = GzDecoder::new(file);
        let mut data = Vec::new();
        decoder.read_to_end(&mut data).map_err(io_err)?;
        Ok(data)
    } else {
        std::fs::read(path).map_err(io_err)
    }
}

struct SliceReader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> SliceReader<'a> {
    fn new(data: &'a [u8], path: &'a Path) -> Self {
        Self { data, pos: 0, path }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], DataError> {
        let remaining = self.data.len() - self.pos;
        if remaining < len {
            return Err(DataError::TruncatedFile {
                file: self.path.to_owned(),
                offset: self.pos as u64,
                missing: (len - remaining) as u64,
            });
        }
        let slice = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn read_u32(&mut self) -> Result<u32, DataError> {
        let bytes = self.take(4)?;
        Ok(u32::from_be_bytes(bytes.try_into().expect("4 bytes")))
    }
}
