#include "eaid/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace eaid::scn {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

uint64_t parse_u64(const std::string& v, int line, int col) {
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) {
            return std::isdigit(static_cast<unsigned char>(c));
        })) {
        throw parse_error("expected an unsigned integer, got '" + v + "'", line, col);
    }
    return std::stoull(v);
}

double parse_double(const std::string& v, int line, int col) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument(v);
        }
        return d;
    } catch (const std::exception&) {
        throw parse_error("expected a number, got '" + v + "'", line, col);
    }
}

bool parse_bool(const std::string& v, int line, int col) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw parse_error("expected on/off, got '" + v + "'", line, col);
}

sim::protocol_kind parse_protocol(const std::string& v, int line, int col) {
    if (v == "eaid") return sim::protocol_kind::eaid;
    if (v == "full_fallback") return sim::protocol_kind::full_fallback;
    if (v == "resharing") return sim::protocol_kind::resharing;
    if (v == "proactive") return sim::protocol_kind::proactive;
    if (v == "eaid_kv") return sim::protocol_kind::eaid_kv;
    throw parse_error("unknown protocol '" + v + "'", line, col);
}

}  // namespace

scenario_doc parse_scenario_text(const std::string& text) {
    scenario_doc doc;
    bool protocols_set = false, n_set = false;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string no_comment = raw.substr(0, raw.find('#'));
        const std::string line = trim(no_comment);
        if (line.empty()) {
            continue;
        }
        const size_t eq = no_comment.find('=');
        if (eq == std::string::npos) {
            throw parse_error("expected 'key = value'", line_no, 1);
        }
        const std::string key = trim(no_comment.substr(0, eq));
        const std::string value = trim(no_comment.substr(eq + 1));
        const int key_col =
            static_cast<int>(no_comment.find_first_not_of(" \t")) + 1;
        const int val_col = static_cast<int>(eq) + 2;
        if (value.empty()) {
            throw parse_error("missing value for '" + key + "'", line_no, val_col);
        }

        if (key == "protocol") {
            doc.protocols.clear();
            for (const auto& v : split_list(value)) {
                doc.protocols.push_back(parse_protocol(v, line_no, val_col));
            }
            protocols_set = true;
        } else if (key == "n_nodes") {
            doc.n_values.clear();
            for (const auto& v : split_list(value)) {
                doc.n_values.push_back(
                    static_cast<uint32_t>(parse_u64(v, line_no, val_col)));
            }
            n_set = true;
        } else if (key == "max_faults") {
            doc.max_faults = static_cast<uint32_t>(parse_u64(value, line_no, val_col));
            doc.max_faults_set = true;
        } else if (key == "delta") {
            doc.delta = static_cast<uint32_t>(parse_u64(value, line_no, val_col));
        } else if (key == "num_entries") {
            doc.num_entries = parse_u64(value, line_no, val_col);
        } else if (key == "message_size_bytes") {
            doc.message_size_bytes =
                static_cast<uint32_t>(parse_u64(value, line_no, val_col));
        } else if (key == "latency_mean_ms") {
            doc.latency_mean_ms = parse_double(value, line_no, val_col);
        } else if (key == "latency_stddev_ms") {
            doc.latency_stddev_ms = parse_double(value, line_no, val_col);
        } else if (key == "timeout_ms") {
            doc.timeout_ms = parse_double(value, line_no, val_col);
        } else if (key == "entry_spacing_ms") {
            doc.entry_spacing_ms = parse_double(value, line_no, val_col);
        } else if (key == "heartbeat_ms") {
            doc.heartbeat_ms = parse_double(value, line_no, val_col);
        } else if (key == "seed") {
            doc.seed = parse_u64(value, line_no, val_col);
        } else if (key == "partition_size") {
            for (const auto& v : split_list(value)) {
                if (v != "max") {
                    parse_u64(v, line_no, val_col);  // must be numeric
                }
                doc.partition_sizes.push_back(v);
            }
        } else if (key == "partition_nodes") {
            for (const auto& v : split_list(value)) {
                doc.partition_nodes.push_back(
                    static_cast<node_id_t>(parse_u64(v, line_no, val_col)));
            }
        } else if (key == "partition_start") {
            doc.partition_start = parse_u64(value, line_no, val_col);
            doc.has_partition_window = true;
        } else if (key == "partition_end") {
            doc.partition_end = parse_u64(value, line_no, val_col);
            doc.has_partition_window = true;
        } else if (key == "crash_leader_every") {
            doc.crash_leader_every = parse_u64(value, line_no, val_col);
        } else if (key == "crash_revive") {
            doc.crash_revive = parse_bool(value, line_no, val_col);
        } else if (key == "prune_jitter") {
            doc.prune_jitter = parse_bool(value, line_no, val_col);
        } else if (key == "crash_schedule") {
            for (const auto& v : split_list(value)) {
                const size_t colon = v.find(':');
                if (colon == std::string::npos) {
                    throw parse_error("crash_schedule entries are node:entry",
                                      line_no, val_col);
                }
                sim::crash_spec c;
                c.node = static_cast<node_id_t>(
                    parse_u64(trim(v.substr(0, colon)), line_no, val_col));
                c.entry = parse_u64(trim(v.substr(colon + 1)), line_no, val_col);
                doc.crash_schedule.push_back(c);
            }
        } else {
            throw parse_error("unknown key '" + key + "'", line_no, key_col);
        }
    }
    (void)protocols_set;
    (void)n_set;
    if (!doc.partition_sizes.empty() && !doc.partition_nodes.empty()) {
        throw parse_error("partition_size and partition_nodes are exclusive", 1, 1);
    }
    if ((!doc.partition_sizes.empty() || !doc.partition_nodes.empty()) &&
        !doc.has_partition_window) {
        throw parse_error("partition_start/partition_end required with partitions",
                          1, 1);
    }
    return doc;
}

scenario_doc parse_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw parse_error("cannot open scenario file '" + path + "'", 0, 0);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario_text(buf.str());
}

std::vector<std::pair<std::string, sim::scenario_config>> expand(
    const scenario_doc& doc) {
    std::vector<std::pair<std::string, sim::scenario_config>> out;
    const bool sweeping = doc.protocols.size() > 1 || doc.n_values.size() > 1 ||
                          doc.partition_sizes.size() > 1;
    std::vector<std::string> sizes = doc.partition_sizes;
    if (sizes.empty()) {
        sizes.push_back("");  // placeholder: explicit nodes or no partition
    }
    for (auto proto : doc.protocols) {
        for (uint32_t n : doc.n_values) {
            for (const auto& size : sizes) {
                sim::scenario_config c;
                c.protocol = proto;
                c.n_nodes = n;
                c.max_faults = doc.max_faults_set ? doc.max_faults : (n - 1) / 2;
                c.delta = doc.delta;
                c.num_entries = doc.num_entries;
                c.message_size_bytes = doc.message_size_bytes;
                c.latency.mean_ms = doc.latency_mean_ms;
                c.latency.stddev_ms = doc.latency_stddev_ms;
                c.timeout_ms = doc.timeout_ms;
                c.entry_spacing_ms = doc.entry_spacing_ms;
                c.heartbeat_ms = doc.heartbeat_ms;
                c.seed = doc.seed;
                c.crash_leader_every = doc.crash_leader_every;
                c.crash_revive = doc.crash_revive;
                c.prune_jitter = doc.prune_jitter;
                c.crash_schedule = doc.crash_schedule;

                sim::partition_spec p;
                p.start_entry = doc.partition_start;
                p.end_entry = doc.partition_end;
                if (!doc.partition_nodes.empty()) {
                    p.nodes = doc.partition_nodes;
                } else if (!size.empty()) {
                    const uint32_t count =
                        size == "max" ? c.max_faults
                                      : static_cast<uint32_t>(std::stoull(size));
                    // Highest-id nodes, never the leader at node 0.
                    for (uint32_t i = 0; i < count && i + 1 < n; ++i) {
                        p.nodes.push_back(n - 1 - i);
                    }
                }
                if (!p.nodes.empty() && doc.has_partition_window) {
                    c.partitions.push_back(p);
                }

                std::string label;
                if (sweeping) {
                    label = "protocol=" + sim::to_string(proto);
                    if (doc.n_values.size() > 1) {
                        label += ",n_nodes=" + std::to_string(n);
                    }
                    if (doc.partition_sizes.size() > 1) {
                        label += ",partition_size=" + size;
                    }
                }
                out.emplace_back(label, std::move(c));
            }
        }
    }
    return out;
}

}  // namespace eaid::scn
