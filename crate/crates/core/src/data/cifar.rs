//! CIFAR-10 binary layout: per record one label byte and 3072 pixel bytes
//! (R plane, G plane, B plane, each 32×32 row-major).

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

const SIDE: usize = 32;
const RECORD: usize = 1 + 3 * SIDE * SIDE;

pub fn decode_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::MalformedCifar { len: bytes.len() });
    }
    let mut data = Dataset::empty(SIDE);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::CifarLabel { record: i, label: rec[0] });
        }
        data.push(&rec[1..], rec[0]);
    }
    Ok(data)
}

pub fn encode_cifar10(data: &Dataset) -> Result<Vec<u8>> {
    if data.side != SIDE {
        return Err(Error::InvalidArgument(format!("CIFAR layout needs 32×32 images, got side {}", data.side)));
    }
    let mut out = Vec::with_capacity(data.len() * RECORD);
    for i in 0..data.len() {
        if data.labels[i] >= 10 {
            return Err(Error::CifarLabel { record: i, label: data.labels[i] });
        }
        out.push(data.labels[i]);
        out.extend_from_slice(data.raw(i));
    }
    Ok(out)
}

pub fn read_cifar10_binary(path: &Path) -> Result<Dataset> {
    decode_cifar10(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_cifar10_binary(path: &Path, data: &Dataset) -> Result<()> {
    fs::write(path, encode_cifar10(data)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_black_record() {
        let mut bytes = vec![0u8; RECORD];
        bytes[0] = 3;
        let d = decode_cifar10(&bytes).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels, vec![3]);
        assert!(d.image(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(decode_cifar10(&[]).unwrap().is_empty());
    }

    #[test]
    fn bad_length() {
        let err = decode_cifar10(&[0u8; 100]).unwrap_err();
        assert!(err.to_string().contains("malformed CIFAR binary"));
    }

    #[test]
    fn two_records_round_trip() {
        let mut d = Dataset::empty(32);
        let a: Vec<u8> = (0..3072).map(|i| (i % 251) as u8).collect();
        let b: Vec<u8> = (0..3072).map(|i| (i * 7 % 256) as u8).collect();
        d.push(&a, 9);
        d.push(&b, 0);
        let bytes = encode_cifar10(&d).unwrap();
        assert_eq!(bytes.len(), 2 * RECORD);
        assert_eq!(decode_cifar10(&bytes).unwrap(), d);
        // channel-major: byte 1 is R(0,0), byte 1 + 1024 is G(0,0)
        assert_eq!(bytes[1], a[0]);
        assert_eq!(bytes[1 + 1024], a[1024]);
    }
}
