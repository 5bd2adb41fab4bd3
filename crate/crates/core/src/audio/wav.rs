use std::fs;
use std::path::Path;

use super::AudioBuffer;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Sample encoding used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

struct Format {
    code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<Format> {
    if body.len() < 16 {
        return Err(Error::CorruptFile("fmt chunk shorter than 16 bytes".into()));
    }
    let mut code = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if code == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(Error::CorruptFile("truncated extensible fmt chunk".into()));
        }
        // First two bytes of the sub-format GUID carry the plain format code.
        code = u16_at(body, 24);
    }
    Ok(Format {
        code,
        channels,
        sample_rate,
        bits,
    })
}

/// Reads a RIFF/WAVE file holding PCM16 or IEEE float32 samples in one or
/// two channels. Stereo is averaged down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub(crate) fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut format = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::CorruptFile(format!(
                    "chunk {:?} claims {size} bytes past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        match id {
            b"fmt " => format = Some(parse_fmt(&bytes[start..end])?),
            b"data" => data = Some(&bytes[start..end]),
            _ => {}
        }
        // Chunks are word aligned.
        pos = end + (size & 1);
    }
    let format = format.ok_or_else(|| Error::CorruptFile("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::CorruptFile("missing data chunk".into()))?;

    if format.channels == 0 || format.channels > 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels",
            format.channels
        )));
    }
    let channels = format.channels as usize;
    let raw: Vec<f64> = match (format.code, format.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        (code, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "format code {code} with {bits} bits per sample"
            )))
        }
    };
    let width = format.bits as usize / 8 * channels;
    if data.len() % width != 0 {
        return Err(Error::CorruptFile(format!(
            "data chunk of {} bytes is not a whole number of {width}-byte frames",
            data.len()
        )));
    }
    let mono = if channels == 1 {
        raw
    } else {
        raw.chunks_exact(2).map(|f| 0.5 * (f[0] + f[1])).collect()
    };
    AudioBuffer::new(mono, format.sample_rate)
        .map_err(|e| Error::CorruptFile(format!("invalid samples: {e}")))
}

fn encode_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub(crate) fn encode_wav(audio: &AudioBuffer, encoding: WavEncoding) -> Vec<u8> {
    let (code, bits) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 16u16),
        WavEncoding::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let block = bits / 8;
    let data_len = audio.len() * block as usize;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate().to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate() * block as u32).to_le_bytes());
    out.extend_from_slice(&block.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in audio.samples() {
        match encoding {
            WavEncoding::Pcm16 => out.extend_from_slice(&encode_pcm16(s).to_le_bytes()),
            WavEncoding::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }
    out
}

/// Writes a mono WAV file. PCM16 clamps to the representable range.
pub fn store_wav(audio: &AudioBuffer, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(audio, encoding)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wav_bytes(code: u16, channels: u16, bits: u16, rate: u32, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + payload.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&code.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        let block = channels * bits / 8;
        out.extend_from_slice(&(rate * block as u32).to_le_bytes());
        out.extend_from_slice(&block.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn pcm16_silence_one_second() {
        let bytes = wav_bytes(1, 1, 16, 32_000, &vec![0u8; 64_000]);
        let a = decode_wav(&bytes).unwrap();
        assert_eq!(a.sample_rate(), 32_000);
        assert_eq!(a.len(), 32_000);
        assert!(a.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pcm16_min_code_is_minus_one() {
        let bytes = wav_bytes(1, 1, 16, 8000, &i16::MIN.to_le_bytes());
        assert_eq!(decode_wav(&bytes).unwrap().samples(), &[-1.0]);
    }

    #[test]
    fn stereo_is_mean_downmixed() {
        let mut payload = Vec::new();
        payload.extend_from_slice(&0.5f32.to_le_bytes());
        payload.extend_from_slice(&(-0.5f32).to_le_bytes());
        payload.extend_from_slice(&0.25f32.to_le_bytes());
        payload.extend_from_slice(&0.75f32.to_le_bytes());
        let a = decode_wav(&wav_bytes(3, 2, 32, 8000, &payload)).unwrap();
        assert_eq!(a.samples(), &[0.0, 0.5]);
    }

    #[test]
    fn unsupported_and_corrupt_inputs() {
        // 24-bit PCM.
        let bytes = wav_bytes(1, 1, 24, 8000, &[0u8; 6]);
        assert!(matches!(decode_wav(&bytes), Err(Error::UnsupportedFormat(_))));
        // A-law.
        let bytes = wav_bytes(6, 1, 8, 8000, &[0u8; 4]);
        assert!(matches!(decode_wav(&bytes), Err(Error::UnsupportedFormat(_))));
        // Three channels.
        let bytes = wav_bytes(1, 3, 16, 8000, &[0u8; 6]);
        assert!(matches!(decode_wav(&bytes), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_wav(b"OggS...."), Err(Error::UnsupportedFormat(_))));

        let mut bytes = wav_bytes(1, 1, 16, 8000, &[0u8; 100]);
        bytes.truncate(bytes.len() - 10);
        assert!(matches!(decode_wav(&bytes), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn pcm16_clamps_out_of_range() {
        let a = AudioBuffer::new(vec![1.5, -3.0, 0.25], 8000).unwrap();
        let back = decode_wav(&encode_wav(&a, WavEncoding::Pcm16)).unwrap();
        assert_eq!(back.samples()[0], 32767.0 / 32768.0);
        assert_eq!(back.samples()[1], -1.0);
        assert!((back.samples()[2] - 0.25).abs() <= 1.0 / 32768.0);
    }

    #[test]
    fn store_and_load_through_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let a = AudioBuffer::new(vec![0.125, -0.5, 0.0], 48_000).unwrap();
        store_wav(&a, &path, WavEncoding::Float32).unwrap();
        assert_eq!(load_wav(&path).unwrap(), a);
        assert!(matches!(
            load_wav(dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn float32_round_trip_is_bit_exact(v in prop::collection::vec(-2.0f32..2.0, 0..200)) {
            let a = AudioBuffer::new(v.iter().map(|&x| x as f64).collect(), 22_050).unwrap();
            let back = decode_wav(&encode_wav(&a, WavEncoding::Float32)).unwrap();
            prop_assert_eq!(back, a);
        }

        #[test]
        fn pcm16_round_trip_within_one_lsb(v in prop::collection::vec(-1.0f64..1.0, 1..200)) {
            let a = AudioBuffer::new(v, 16_000).unwrap();
            let back = decode_wav(&encode_wav(&a, WavEncoding::Pcm16)).unwrap();
            for (x, y) in a.samples().iter().zip(back.samples()) {
                let expected = x.clamp(-1.0, 32767.0 / 32768.0);
                prop_assert!((expected - y).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
