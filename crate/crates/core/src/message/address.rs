use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::MessageError;

/// A 128-bit canonical network address. IPv4 addresses are stored in their
/// IPv4-mapped IPv6 form so every address has exactly one representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NetAddress(u128);

impl NetAddress {
    pub const UNSPECIFIED: NetAddress = NetAddress(0);

    pub const fn from_bits(bits: u128) -> Self {
        NetAddress(bits)
    }

    pub const fn bits(self) -> u128 {
        self.0
    }

    pub fn v4(a: u8, b: u8, c: u8, d: u8) -> Self {
        Ipv4Addr::new(a, b, c, d).into()
    }

    pub fn to_ip(self) -> IpAddr {
        let v6 = Ipv6Addr::from(self.0);
        match v6.to_ipv4_mapped() {
            Some(v4) => IpAddr::V4(v4),
            None => IpAddr::V6(v6),
        }
    }

    pub fn is_v4(self) -> bool {
        matches!(self.to_ip(), IpAddr::V4(_))
    }
}

impl From<Ipv4Addr> for NetAddress {
    fn from(v4: Ipv4Addr) -> Self {
        NetAddress(u128::from(v4.to_ipv6_mapped()))
    }
}

impl From<Ipv6Addr> for NetAddress {
    fn from(v6: Ipv6Addr) -> Self {
        NetAddress(u128::from(v6))
    }
}

impl From<IpAddr> for NetAddress {
    fn from(ip: IpAddr) -> Self {
        match ip {
            IpAddr::V4(v4) => v4.into(),
            IpAddr::V6(v6) => v6.into(),
        }
    }
}

impl FromStr for NetAddress {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse::<IpAddr>().map(NetAddress::from).map_err(|_| MessageError::InvalidAddress(s.to_string()))
    }
}

impl fmt::Display for NetAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_ip().fmt(f)
    }
}

impl Serialize for NetAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NetAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An address prefix such as `10.0.0.0/24`. IPv4 prefix lengths are given in
/// IPv4 terms and widened by 96 internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subnet {
    base: NetAddress,
    prefix_len: u8,
}

impl Subnet {
    pub fn new(base: NetAddress, prefix_len: u8) -> Result<Self, MessageError> {
        if prefix_len > 128 {
            return Err(MessageError::InvalidSubnet(format!("{base}/{prefix_len}")));
        }
        let mask = Self::mask_for(prefix_len);
        Ok(Subnet { base: NetAddress::from_bits(base.bits() & mask), prefix_len })
    }

    fn mask_for(prefix_len: u8) -> u128 {
        if prefix_len == 0 {
            0
        } else {
            u128::MAX << (128 - u32::from(prefix_len))
        }
    }

    pub fn base(&self) -> NetAddress {
        self.base
    }

    /// Prefix length in 128-bit terms.
    pub fn prefix_len(&self) -> u8 {
        self.prefix_len
    }

    pub fn contains(&self, addr: NetAddress) -> bool {
        addr.bits() & Self::mask_for(self.prefix_len) == self.base.bits()
    }

    /// Offset of `addr` from the subnet base, if it lies inside the subnet.
    pub fn offset_of(&self, addr: NetAddress) -> Option<u128> {
        self.contains(addr).then(|| addr.bits() - self.base.bits())
    }

    pub fn host(&self, offset: u128) -> Option<NetAddress> {
        let addr = NetAddress::from_bits(self.base.bits().checked_add(offset)?);
        self.contains(addr).then_some(addr)
    }
}

impl FromStr for Subnet {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MessageError::InvalidSubnet(s.to_string());
        let (addr, len) = s.trim().split_once('/').ok_or_else(bad)?;
        let ip: IpAddr = addr.parse().map_err(|_| bad())?;
        let len: u8 = len.parse().map_err(|_| bad())?;
        let len = match ip {
            IpAddr::V4(_) if len <= 32 => len + 96,
            IpAddr::V6(_) if len <= 128 => len,
            _ => return Err(bad()),
        };
        Subnet::new(ip.into(), len)
    }
}

impl fmt::Display for Subnet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.base.is_v4() && self.prefix_len >= 96 {
            write!(f, "{}/{}", self.base, self.prefix_len - 96)
        } else {
            write!(f, "{}/{}", self.base, self.prefix_len)
        }
    }
}

impl Serialize for Subnet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subnet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ipv4_is_stored_mapped() {
        let a: NetAddress = "10.0.0.2".parse().unwrap();
        let b: NetAddress = "::ffff:10.0.0.2".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bits(), 0xffff_0a00_0002);
        assert_eq!(a.to_string(), "10.0.0.2");
    }

    #[test]
    fn subnet_membership_and_offsets() {
        let net: Subnet = "10.0.1.0/24".parse().unwrap();
        assert!(net.contains(NetAddress::v4(10, 0, 1, 200)));
        assert!(!net.contains(NetAddress::v4(10, 0, 2, 1)));
        assert_eq!(net.offset_of(NetAddress::v4(10, 0, 1, 5)), Some(5));
        assert_eq!(net.host(5), Some(NetAddress::v4(10, 0, 1, 5)));
        assert_eq!(net.host(256), None);
        assert_eq!(net.to_string(), "10.0.1.0/24");
    }

    #[test]
    fn rejects_garbage() {
        assert!("10.0.0".parse::<NetAddress>().is_err());
        assert!("10.0.0.0/33".parse::<Subnet>().is_err());
        assert!("10.0.0.0".parse::<Subnet>().is_err());
    }

    proptest! {
        #[test]
        fn ordering_is_total(a: u128, b: u128, c: u128) {
            let (a, b, c) = (NetAddress::from_bits(a), NetAddress::from_bits(b), NetAddress::from_bits(c));
            // antisymmetry
            if a <= b && b <= a { prop_assert_eq!(a, b); }
            // transitivity
            if a <= b && b <= c { prop_assert!(a <= c); }
            prop_assert!(a <= b || b <= a);
        }

        #[test]
        fn display_parse_roundtrip(bits: u128) {
            let a = NetAddress::from_bits(bits);
            prop_assert_eq!(a.to_string().parse::<NetAddress>().unwrap(), a);
        }
    }
}
