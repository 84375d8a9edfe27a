/// 128 random bits from the thread-local CSPRNG, hex encoded.
pub fn new_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}
