/// RC4 cipher state: a permutation of 0..=255 and the two PRGA indices.
#[derive(Clone, PartialEq, Eq)]
pub struct Rc4State {
    s: [u8; 256],
    i: u8,
    j: u8,
}

impl std::fmt::Debug for Rc4State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Rc4State").field("i", &self.i).field("j", &self.j).finish_non_exhaustive()
    }
}

impl Rc4State {
    /// Key schedule.
    ///
    /// # Panics
    /// If `key` is empty or longer than 256 octets.
    pub fn new(key: &[u8]) -> Self {
        assert!((1..=256).contains(&key.len()), "RC4 key must be 1..=256 octets");
        let mut s = [0u8; 256];
        for (k, slot) in s.iter_mut().enumerate() {
            *slot = k as u8;
        }
        let mut j: u8 = 0;
        for i in 0..256 {
            j = j.wrapping_add(s[i]).wrapping_add(key[i % key.len()]);
            s.swap(i, j as usize);
        }
        Rc4State { s, i: 0, j: 0 }
    }

    fn next_byte(&mut self) -> u8 {
        self.i = self.i.wrapping_add(1);
        self.j = self.j.wrapping_add(self.s[self.i as usize]);
        self.s.swap(self.i as usize, self.j as usize);
        let idx = self.s[self.i as usize].wrapping_add(self.s[self.j as usize]);
        self.s[idx as usize]
    }

    pub fn apply_in_place(&mut self, data: &mut [u8]) {
        for b in data {
            *b ^= self.next_byte();
        }
    }

    /// XOR `data` with the next `data.len()` keystream octets.
    pub fn apply(&mut self, data: &[u8]) -> Vec<u8> {
        let mut out = data.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    pub fn keystream(&mut self, n: usize) -> Vec<u8> {
        self.apply(&vec![0; n])
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = [false; 256];
        for &b in &self.s {
            seen[b as usize] = true;
        }
        seen.iter().all(|x| *x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(bytes: &[u8]) -> String {
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    #[test]
    fn reference_keystreams() {
        let key: Vec<u8> = (1..=16).collect();
        assert_eq!(hex(&Rc4State::new(&key).keystream(16)), "9ac7cc9a609d1ef7b2932899cde41b97");
        assert_eq!(hex(&Rc4State::new(&[1, 2, 3, 4, 5]).keystream(16)), "b2396305f03dc027ccc3524a0a1118a8");
    }

    #[test]
    fn empty_input_does_not_advance() {
        let mut a = Rc4State::new(b"key");
        let before = a.clone();
        assert!(a.apply(&[]).is_empty());
        assert_eq!(a, before);
    }

    #[test]
    fn involution_with_paired_states() {
        let data = b"REGISTER sip:harish@192.168.100.37 SIP/2.0".to_vec();
        let sealed = Rc4State::new(b"k").apply(&data);
        assert_ne!(sealed, data);
        assert_eq!(Rc4State::new(b"k").apply(&sealed), data);
    }

    #[test]
    fn stays_a_permutation() {
        let mut s = Rc4State::new(&[0xff; 16]);
        assert!(s.is_permutation());
        for _ in 0..1000 {
            s.keystream(1);
            assert!(s.is_permutation());
        }
    }
}
