//! Audio frontend: WAV decoding, 25 ms / 10 ms framing and MFCC grids.

mod cache;
mod mfcc;
mod wav;

pub use cache::{read_mfcc_cache, write_mfcc_cache};
pub use mfcc::{
    dct_ii_orthonormal, dct_iii_orthonormal, frame_count, hamming, hz_to_mel, mel_filterbank,
    mel_to_hz, slice_utterance, MfccConfig, MfccExtractor, MfccGrid,
};
pub use wav::{read_wav, write_wav, WavSignal};
