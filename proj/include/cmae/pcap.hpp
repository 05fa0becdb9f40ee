#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmae/data.hpp"

namespace cmae::data {

struct PcapExtraction {
    std::vector<UnlabeledRecord> records;
    std::int64_t skipped = 0; // zero-payload, non-IPv4, or non-TCP/UDP packets
};

// classic PCAP only (magic 0xA1B2C3D4 either byte order), Ethernet link
// layer, IPv4, TCP/UDP payloads. honors IHL and TCP data offset, unwraps one
// 802.1Q VLAN tag, and never reads past a record's captured length.
PcapExtraction extract_pcap_payloads(const std::string& path);
PcapExtraction extract_pcap_payloads_bytes(const std::vector<std::uint8_t>& file_bytes);

} // namespace cmae::data
