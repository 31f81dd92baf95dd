//! Saves an embedding table, reads it back and shows what corruption looks like.

use cadc::embedding_file::{decode, encode, load_embeddings, save_embeddings};
use cadc::nn::Matrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = Matrix::from_vec(2, 3, vec![0.5f32, -0.0, 1e-40, 3.0, f32::MAX, -7.25])?;
    let path = std::env::temp_dir().join("cadc-example.emb");
    save_embeddings(&table, &path)?;
    let back = load_embeddings(&path)?;
    println!("{} bytes on disk, bit-identical: {}", std::fs::metadata(&path)?.len(), back.bit_eq(&table));

    let mut bytes = encode(&table)?;
    bytes[20] ^= 0x10;
    println!("flipped payload bit: {}", decode(&bytes).unwrap_err());
    println!("cut short: {}", decode(&bytes[..30]).unwrap_err());
    println!("foreign file: {}", decode(b"GIF89a..........").unwrap_err());
    Ok(())
}
