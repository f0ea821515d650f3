//! Saturated gates push activations and gradients into the subnormal range,
//! where x86 arithmetic runs one to two orders of magnitude slower. Training
//! flushes them to zero for the current thread and restores the previous
//! mode afterwards.

#[cfg(target_arch = "x86_64")]
mod imp {
    use std::arch::asm;

    /// Flush-to-zero (bit 15) and denormals-are-zero (bit 6).
    const FTZ_DAZ: u32 = 0x8040;

    fn read() -> u32 {
        let mut csr: u32 = 0;
        // SAFETY: stmxcsr writes four bytes to a valid local.
        unsafe { asm!("stmxcsr [{}]", in(reg) &mut csr, options(nostack)) };
        csr
    }

    fn write(csr: u32) {
        // SAFETY: only the FTZ/DAZ bits ever differ from a value read back
        // from the register, and neither can raise an exception.
        unsafe { asm!("ldmxcsr [{}]", in(reg) &csr, options(nostack, readonly)) };
    }

    pub struct FlushDenormals(u32);

    impl FlushDenormals {
        pub fn new() -> Self {
            let old = read();
            write(old | FTZ_DAZ);
            Self(old)
        }
    }

    impl Drop for FlushDenormals {
        fn drop(&mut self) {
            write(self.0);
        }
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod imp {
    pub struct FlushDenormals;

    impl FlushDenormals {
        pub fn new() -> Self {
            Self
        }
    }
}

pub(crate) use imp::FlushDenormals;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_is_scoped() {
        let tiny = std::hint::black_box(f64::MIN_POSITIVE);
        let half = std::hint::black_box(0.5);
        assert!(tiny * half > 0.0);
        {
            let _g = FlushDenormals::new();
            if cfg!(target_arch = "x86_64") {
                assert_eq!(tiny * std::hint::black_box(half), 0.0);
            }
        }
        assert!(tiny * std::hint::black_box(half) > 0.0);
    }
}
