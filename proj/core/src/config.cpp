#include "gft/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace gft {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "on" || value == "true" || value == "1" || value == "yes") return true;
    if (value == "off" || value == "false" || value == "0" || value == "no") return false;
    throw ConfigError(key + ": expected on/off, got '" + value + "'");
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    try {
        long v = std::stol(value);
        if (v < 0) throw ConfigError(key + ": must be nonnegative");
        return static_cast<std::size_t>(v);
    } catch (const std::invalid_argument&) {
        throw ConfigError(key + ": expected an integer, got '" + value + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError(key + ": integer out of range: '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
}

}  // namespace

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError(line_no, "empty key");
        if (kv.count(key)) throw ParseError(line_no, "duplicate key '" + key + "'");
        kv[key] = value;
    }
    return kv;
}

RunConfig run_config_from_kv(const std::map<std::string, std::string>& kv) {
    RunConfig rc;
    for (const auto& [key, value] : kv) {
        if (key == "d_model") rc.model.d_model = parse_size(key, value);
        else if (key == "n_heads") rc.model.n_heads = parse_size(key, value);
        else if (key == "d_head") rc.model.d_head = parse_size(key, value);
        else if (key == "ffn_hidden") rc.model.ffn_hidden = parse_size(key, value);
        else if (key == "n_layers") rc.model.n_layers = parse_size(key, value);
        else if (key == "assembly") {
            if (value == "encoder_decoder") rc.model.assembly = Assembly::EncoderDecoder;
            else if (value == "stacked") rc.model.assembly = Assembly::Stacked;
            else throw ConfigError("assembly: expected encoder_decoder or stacked, got '" + value + "'");
        }
        else if (key == "gated_attention") rc.model.gated_attention = parse_bool(key, value);
        else if (key == "mutual_fusion") rc.model.mutual_fusion = parse_bool(key, value);
        else if (key == "d_pos") rc.model.d_pos = parse_size(key, value);
        else if (key == "dropout") rc.model.dropout = parse_double(key, value);
        else if (key == "grid") rc.model.grid = parse_size(key, value);
        else if (key == "image_size") rc.model.image_size = parse_size(key, value);
        else if (key == "embed_dim") rc.model.embed_dim = parse_size(key, value);
        else if (key == "lstm_hidden") rc.model.lstm_hidden = parse_size(key, value);
        else if (key == "max_q_len") rc.model.max_q_len = parse_size(key, value);
        else if (key == "epochs") rc.train.epochs = parse_size(key, value);
        else if (key == "batch_size") rc.train.batch_size = parse_size(key, value);
        else if (key == "lr_base") rc.train.lr_base = parse_double(key, value);
        else if (key == "lr_cap") rc.train.lr_cap = parse_double(key, value);
        else if (key == "decay_factor") rc.train.decay_factor = parse_double(key, value);
        else if (key == "decay_epochs") {
            rc.train.decay_epochs.clear();
            std::istringstream is(value);
            std::string part;
            while (std::getline(is, part, ','))
                if (!trim(part).empty()) rc.train.decay_epochs.push_back(parse_size(key, trim(part)));
        }
        else if (key == "adam_beta1") rc.train.beta1 = parse_double(key, value);
        else if (key == "adam_beta2") rc.train.beta2 = parse_double(key, value);
        else if (key == "adam_eps") rc.train.adam_eps = parse_double(key, value);
        else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(parse_size(key, value));
        else throw ConfigError("unknown config key '" + key + "'");
    }
    rc.model.validate();
    rc.train.validate();
    return rc;
}

RunConfig load_run_config(const std::string& path) { return run_config_from_kv(parse_kv_file(path)); }

}  // namespace gft
