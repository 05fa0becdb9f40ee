#include "cmae/pcap.hpp"

#include <fstream>
#include <sstream>

namespace cmae::data {

namespace {

constexpr std::uint32_t kMagicNative = 0xA1B2C3D4u;
constexpr std::uint32_t kMagicSwapped = 0xD4C3B2A1u;

// little-endian read, optionally byte-swapped (capture headers follow the
// writing machine's byte order, announced by the magic number)
std::uint32_t read_u32(const std::uint8_t* p, bool swap) {
    const std::uint32_t le = static_cast<std::uint32_t>(p[0]) |
                             static_cast<std::uint32_t>(p[1]) << 8 |
                             static_cast<std::uint32_t>(p[2]) << 16 |
                             static_cast<std::uint32_t>(p[3]) << 24;
    if (!swap) return le;
    return ((le & 0x000000FFu) << 24) | ((le & 0x0000FF00u) << 8) |
           ((le & 0x00FF0000u) >> 8) | ((le & 0xFF000000u) >> 24);
}

// protocol fields are always network byte order (big-endian)
std::uint16_t read_be16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(static_cast<std::uint16_t>(p[0]) << 8 |
                                      static_cast<std::uint16_t>(p[1]));
}

std::string ipv4_to_string(const std::uint8_t* p) {
    std::ostringstream out;
    out << static_cast<int>(p[0]) << '.' << static_cast<int>(p[1]) << '.'
        << static_cast<int>(p[2]) << '.' << static_cast<int>(p[3]);
    return out.str();
}

} // namespace

PcapExtraction extract_pcap_payloads_bytes(const std::vector<std::uint8_t>& file) {
    if (file.size() < 24) raise(ErrorCode::NotAPcap, "file shorter than the 24-byte pcap header");

    const std::uint32_t magic_le = read_u32(file.data(), false);
    bool swap = false;
    if (magic_le == kMagicNative)
        swap = false;
    else if (magic_le == kMagicSwapped)
        swap = true;
    else
        raise(ErrorCode::NotAPcap, "unrecognized magic number (classic pcap expected)");

    const std::uint32_t network = read_u32(file.data() + 20, swap);
    if (network != 1)
        raise(ErrorCode::NotAPcap,
              "unsupported link type " + std::to_string(network) + " (Ethernet expected)");

    PcapExtraction result;
    std::size_t pos = 24;
    std::int64_t index = 0; // 1-based packet ordinal, assigned on header read

    while (pos < file.size()) {
        ++index;
        if (file.size() - pos < 16)
            raise(ErrorCode::TruncatedCapture,
                  "file ends inside the record header of packet " + std::to_string(index));
        const std::uint32_t incl_len = read_u32(file.data() + pos + 8, swap);
        pos += 16;
        if (file.size() - pos < incl_len)
            raise(ErrorCode::TruncatedCapture,
                  "file ends inside the data of packet " + std::to_string(index) + " (expected " +
                      std::to_string(incl_len) + " bytes)");
        const std::uint8_t* pkt = file.data() + pos;
        const std::size_t caplen = incl_len;
        pos += incl_len;

        // ethernet header; every parse below is bounded by caplen
        if (caplen < 14) {
            ++result.skipped;
            continue;
        }
        std::size_t cursor = 12;
        std::uint16_t ethertype = read_be16(pkt + cursor);
        cursor += 2;
        if (ethertype == 0x8100) { // 802.1Q tag, unwrapped once
            if (caplen < cursor + 4) {
                ++result.skipped;
                continue;
            }
            ethertype = read_be16(pkt + cursor + 2);
            cursor += 4;
        }
        if (ethertype != 0x0800) { // IPv4 only
            ++result.skipped;
            continue;
        }

        const std::size_t ip_start = cursor;
        if (caplen < ip_start + 20) {
            ++result.skipped;
            continue;
        }
        const std::uint8_t version = pkt[ip_start] >> 4;
        const std::size_t ihl = static_cast<std::size_t>(pkt[ip_start] & 0x0F) * 4;
        if (version != 4 || ihl < 20 || caplen < ip_start + ihl) {
            ++result.skipped;
            continue;
        }
        const std::uint16_t total_len = read_be16(pkt + ip_start + 2);
        if (total_len < ihl) {
            ++result.skipped;
            continue;
        }
        // the IP datagram may end before the captured frame does (ethernet
        // padding); never read past either boundary
        const std::size_t ip_end = std::min(ip_start + total_len, caplen);
        const std::uint8_t proto = pkt[ip_start + 9];
        const std::size_t l4_start = ip_start + ihl;
        if (l4_start > ip_end) {
            ++result.skipped;
            continue;
        }

        std::size_t payload_start = 0, payload_end = 0;
        std::uint16_t src_port = 0, dst_port = 0;
        const char* proto_name = nullptr;
        if (proto == 6) { // TCP
            if (ip_end < l4_start + 20) {
                ++result.skipped;
                continue;
            }
            const std::size_t doff = static_cast<std::size_t>(pkt[l4_start + 12] >> 4) * 4;
            if (doff < 20 || ip_end < l4_start + doff) {
                ++result.skipped;
                continue;
            }
            src_port = read_be16(pkt + l4_start);
            dst_port = read_be16(pkt + l4_start + 2);
            payload_start = l4_start + doff;
            payload_end = ip_end;
            proto_name = "tcp";
        } else if (proto == 17) { // UDP
            if (ip_end < l4_start + 8) {
                ++result.skipped;
                continue;
            }
            src_port = read_be16(pkt + l4_start);
            dst_port = read_be16(pkt + l4_start + 2);
            const std::uint16_t udp_len = read_be16(pkt + l4_start + 4);
            if (udp_len < 8) {
                ++result.skipped;
                continue;
            }
            payload_start = l4_start + 8;
            payload_end = std::min(l4_start + udp_len, ip_end);
            proto_name = "udp";
        } else {
            ++result.skipped;
            continue;
        }

        if (payload_end <= payload_start) { // zero-payload packet
            ++result.skipped;
            continue;
        }

        UnlabeledRecord rec;
        rec.payload.assign(pkt + payload_start, pkt + payload_end);
        rec.packet_index = index;
        rec.five_tuple = ipv4_to_string(pkt + ip_start + 12) + ":" + std::to_string(src_port) +
                         ">" + ipv4_to_string(pkt + ip_start + 16) + ":" +
                         std::to_string(dst_port) + "/" + proto_name;
        result.records.push_back(std::move(rec));
    }
    return result;
}

PcapExtraction extract_pcap_payloads(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return extract_pcap_payloads_bytes(bytes);
}

} // namespace cmae::data
