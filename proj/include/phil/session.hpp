#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <json.hpp>

#include <array>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "phil/env.hpp"
#include "phil/errors.hpp"
#include "phil/log.hpp"
#include "phil/trainer.hpp"

namespace phil::session {

inline constexpr int kProtocol = 1;
inline constexpr std::int64_t kCommandTtlMs = 200;
inline constexpr std::size_t kQueueDepth = 4;
inline constexpr std::size_t kMaxMessage = 1 << 20;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---------------------------------------------------------------- messages

struct Pose {
  double x = 0, y = 0, heading = 0, v = 0, length = 4.5, width = 1.8;
  bool operator==(const Pose&) const = default;
};

struct Hello {
  int proto = kProtocol;
  bool operator==(const Hello&) const = default;
};

struct Welcome {
  std::string scenario;
  int proto = kProtocol;
  bool operator==(const Welcome&) const = default;
};

struct ErrorMsg {
  std::string message;
  bool operator==(const ErrorMsg&) const = default;
};

struct Scene {
  int episode = 0;
  std::string scenario;
  int lanes = 0;
  double lane_width = env::kLaneWidth;
  double road_half_width = 0;
  double goal_distance = 0;
  std::vector<std::array<double, 2>> path;  // ego reference polyline (left-turn)
  bool operator==(const Scene&) const = default;
};

struct Frame {
  int episode = 0;
  int step = 0;
  double sim_time = 0;
  Pose ego;
  std::vector<Pose> traffic;
  double reward = 0;
  double distance = 0;
  bool human = false;  // control_holder
  std::string scenario;
  bool operator==(const Frame&) const = default;
};

struct Command {
  bool intervene = false;
  double steer = 0;
  double pedal = 0;
  std::int64_t client_time_ms = 0;
  bool operator==(const Command&) const = default;
};

using Message = std::variant<Hello, Welcome, ErrorMsg, Scene, Frame, Command>;

inline nlohmann::json pose_json(const Pose& p) {
  return {{"x", p.x}, {"y", p.y}, {"heading", p.heading}, {"v", p.v}, {"length", p.length}, {"width", p.width}};
}

inline Pose pose_from(const nlohmann::json& j) {
  return {j.at("x").get<double>(),       j.at("y").get<double>(), j.at("heading").get<double>(),
          j.at("v").get<double>(),       j.at("length").get<double>(), j.at("width").get<double>()};
}

inline nlohmann::json to_json(const Message& m) {
  return std::visit(
      [](const auto& x) -> nlohmann::json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Hello>) {
          return {{"type", "hello"}, {"proto", x.proto}};
        } else if constexpr (std::is_same_v<T, Welcome>) {
          return {{"type", "welcome"}, {"proto", x.proto}, {"scenario", x.scenario}};
        } else if constexpr (std::is_same_v<T, ErrorMsg>) {
          return {{"type", "error"}, {"message", x.message}};
        } else if constexpr (std::is_same_v<T, Scene>) {
          return {{"type", "scene"},         {"episode", x.episode},
                  {"scenario", x.scenario},  {"lanes", x.lanes},
                  {"lane_width", x.lane_width}, {"road_half_width", x.road_half_width},
                  {"goal_distance", x.goal_distance}, {"path", x.path}};
        } else if constexpr (std::is_same_v<T, Frame>) {
          nlohmann::json tr = nlohmann::json::array();
          for (const auto& p : x.traffic) tr.push_back(pose_json(p));
          return {{"type", "frame"},
                  {"episode", x.episode},
                  {"step", x.step},
                  {"sim_time", x.sim_time},
                  {"ego", pose_json(x.ego)},
                  {"traffic", tr},
                  {"stats", {{"reward", x.reward}, {"distance", x.distance}}},
                  {"control_holder", x.human ? "human" : "rl"},
                  {"scenario", x.scenario}};
        } else {
          return {{"type", "command"},
                  {"intervene", x.intervene},
                  {"steer", x.steer},
                  {"pedal", x.pedal},
                  {"client_time_ms", x.client_time_ms}};
        }
      },
      m);
}

inline std::string serialize(const Message& m) { return to_json(m).dump(); }

inline Message parse(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("not a JSON document: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) throw ProtocolError("missing message type");
  const std::string type = j["type"];
  try {
    if (type == "hello") {
      if (!j.contains("proto") || !j["proto"].is_number_integer()) throw ProtocolError("hello without proto");
      return Hello{j["proto"].get<int>()};
    }
    if (type == "welcome") return Welcome{j.at("scenario").get<std::string>(), j.at("proto").get<int>()};
    if (type == "error") return ErrorMsg{j.value("message", std::string{})};
    if (type == "scene") {
      Scene s;
      s.episode = j.at("episode").get<int>();
      s.scenario = j.at("scenario").get<std::string>();
      s.lanes = j.at("lanes").get<int>();
      s.lane_width = j.at("lane_width").get<double>();
      s.road_half_width = j.at("road_half_width").get<double>();
      s.goal_distance = j.at("goal_distance").get<double>();
      s.path = j.at("path").get<std::vector<std::array<double, 2>>>();
      return s;
    }
    if (type == "frame") {
      Frame f;
      f.episode = j.at("episode").get<int>();
      f.step = j.at("step").get<int>();
      f.sim_time = j.at("sim_time").get<double>();
      f.ego = pose_from(j.at("ego"));
      for (const auto& t : j.at("traffic")) f.traffic.push_back(pose_from(t));
      f.reward = j.at("stats").at("reward").get<double>();
      f.distance = j.at("stats").at("distance").get<double>();
      const std::string holder = j.at("control_holder").get<std::string>();
      if (holder != "human" && holder != "rl") throw ProtocolError("bad control_holder");
      f.human = holder == "human";
      f.scenario = j.at("scenario").get<std::string>();
      return f;
    }
    if (type == "command") {
      Command c;
      c.intervene = j.at("intervene").get<bool>();
      c.steer = j.at("steer").get<double>();
      c.pedal = j.at("pedal").get<double>();
      c.client_time_ms = j.value("client_time_ms", std::int64_t{0});
      if (!(std::abs(c.steer) <= 1.0 && std::abs(c.pedal) <= 1.0)) throw ProtocolError("command outside [-1,1]");
      return c;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError("bad " + type + " message: " + e.what());
  }
  throw ProtocolError("unknown message type '" + type + "'");
}

// ---------------------------------------------------------------- world -> messages

inline Pose pose_of(const env::VehicleState& s) { return {s.x, s.y, s.heading, s.v, s.length, s.width}; }

inline Scene make_scene(const env::World& w, int episode) {
  Scene s;
  s.episode = episode;
  s.scenario = env::to_string(w.scenario());
  s.lanes = w.config().lanes;
  s.road_half_width = w.road_half_width();
  if (w.scenario() == env::Scenario::left_turn) {
    s.goal_distance = env::LeftTurnPath::length();
    for (double d = 0; d <= env::LeftTurnPath::length() + 1e-9; d += 0.5) {
      const auto p = env::LeftTurnPath::pose(d);
      s.path.push_back({p.x, p.y});
    }
  } else {
    s.goal_distance = env::World::kCongestionLength;
  }
  return s;
}

inline Frame make_frame(const env::World& w, int episode, int step, double reward, double distance, bool human) {
  Frame f;
  f.episode = episode;
  f.step = step;
  f.sim_time = w.elapsed();
  f.ego = pose_of(w.ego());
  for (const auto& t : w.traffic()) f.traffic.push_back(pose_of(t.state));
  f.reward = reward;
  f.distance = distance;
  f.human = human;
  f.scenario = env::to_string(w.scenario());
  return f;
}

// ---------------------------------------------------------------- mailbox

// Capacity one, newest wins. Receipt time is stamped by the server clock.
class Mailbox {
 public:
  void put(const Command& c, std::int64_t recv_ms) {
    std::lock_guard<std::mutex> lk(mu_);
    slot_ = Slot{c, recv_ms};
    ++received_;
  }

  std::optional<Command> latest(std::int64_t now) const {
    std::lock_guard<std::mutex> lk(mu_);
    if (!slot_ || !slot_->cmd.intervene) return std::nullopt;
    if (now - slot_->recv_ms >= kCommandTtlMs) return std::nullopt;
    return slot_->cmd;
  }

  void clear() {
    std::lock_guard<std::mutex> lk(mu_);
    slot_.reset();
  }
  std::int64_t received() const {
    std::lock_guard<std::mutex> lk(mu_);
    return received_;
  }

 private:
  struct Slot {
    Command cmd;
    std::int64_t recv_ms;
  };
  mutable std::mutex mu_;
  std::optional<Slot> slot_;
  std::int64_t received_ = 0;
};

// ---------------------------------------------------------------- websocket bits

inline std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

inline std::string ws_accept_key(const std::string& client_key) {
  const std::string s = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  return base64(digest, SHA_DIGEST_LENGTH);
}

inline std::string ws_frame(std::string_view payload, unsigned char opcode = 0x1) {
  std::string f;
  f.push_back(static_cast<char>(0x80 | opcode));
  const std::size_t n = payload.size();
  if (n < 126) {
    f.push_back(static_cast<char>(n));
  } else if (n <= 0xFFFF) {
    f.push_back(126);
    f.push_back(static_cast<char>((n >> 8) & 0xFF));
    f.push_back(static_cast<char>(n & 0xFF));
  } else {
    f.push_back(127);
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xFF));
  }
  f.append(payload);
  return f;
}

struct WsFrame {
  bool fin = true;
  unsigned char opcode = 0;
  std::string payload;
};

// Pops one complete frame off the front of buf, or returns nullopt if more
// bytes are needed.
inline std::optional<WsFrame> ws_take(std::string& buf) {
  if (buf.size() < 2) return std::nullopt;
  const auto b0 = static_cast<unsigned char>(buf[0]), b1 = static_cast<unsigned char>(buf[1]);
  std::size_t pos = 2;
  std::uint64_t len = b1 & 0x7F;
  if (len == 126) {
    if (buf.size() < 4) return std::nullopt;
    len = (static_cast<std::uint64_t>(static_cast<unsigned char>(buf[2])) << 8) | static_cast<unsigned char>(buf[3]);
    pos = 4;
  } else if (len == 127) {
    if (buf.size() < 10) return std::nullopt;
    len = 0;
    for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<unsigned char>(buf[2 + static_cast<std::size_t>(i)]);
    pos = 10;
  }
  if (len > kMaxMessage) throw ProtocolError("websocket frame too large");
  const bool masked = b1 & 0x80;
  std::array<unsigned char, 4> mask{};
  if (masked) {
    if (buf.size() < pos + 4) return std::nullopt;
    for (std::size_t i = 0; i < 4; ++i) mask[i] = static_cast<unsigned char>(buf[pos + i]);
    pos += 4;
  }
  if (buf.size() < pos + len) return std::nullopt;
  WsFrame f;
  f.fin = b0 & 0x80;
  f.opcode = b0 & 0x0F;
  f.payload = buf.substr(pos, static_cast<std::size_t>(len));
  if (masked)
    for (std::size_t i = 0; i < f.payload.size(); ++i) f.payload[i] = static_cast<char>(f.payload[i] ^ mask[i % 4]);
  buf.erase(0, pos + static_cast<std::size_t>(len));
  return f;
}

// ---------------------------------------------------------------- server

struct ServerConfig {
  int port = 8765;  // 0 picks a free port
  std::string bind = "127.0.0.1";
  std::string scenario = "left-turn";
};

struct ServerStats {
  std::int64_t sent = 0;
  std::int64_t dropped = 0;
  std::int64_t malformed = 0;
  std::int64_t refused = 0;
  std::int64_t connections = 0;
};

class Server {
 public:
  explicit Server(ServerConfig cfg) : cfg_(std::move(cfg)) {}
  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start() {
    if (running_) return;
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ConfigError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(cfg_.port));
    if (::inet_pton(AF_INET, cfg_.bind.c_str(), &addr.sin_addr) != 1) throw ConfigError("bad bind address " + cfg_.bind);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 4) < 0) {
      const std::string err = std::strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw ConfigError("cannot listen on port " + std::to_string(cfg_.port) + ": " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    set_nonblocking(listen_fd_);
    if (::pipe(wake_) < 0) throw ConfigError("pipe failed");
    set_nonblocking(wake_[0]);
    set_nonblocking(wake_[1]);
    running_ = true;
    thread_ = std::thread([this] { loop(); });
  }

  void stop() {
    if (!running_) return;
    running_ = false;
    wake();
    if (thread_.joinable()) thread_.join();
    drop_client();
    ::close(listen_fd_);
    ::close(wake_[0]);
    ::close(wake_[1]);
    listen_fd_ = wake_[0] = wake_[1] = -1;
  }

  int port() const { return port_; }
  bool client_ready() const { return ready_; }
  Mailbox& mailbox() { return mailbox_; }
  std::optional<Command> latest_command(std::int64_t now) const { return mailbox_.latest(now); }

  ServerStats stats() const {
    std::lock_guard<std::mutex> lk(q_mu_);
    return stats_;
  }

  // Never blocks on the client: the outbound queue keeps the newest
  // kQueueDepth messages. Scene messages outlive frames when trimming so a
  // client always sees the scene before that episode's frames. Serialising
  // happens on the network thread, so dropped frames cost nothing here.
  void broadcast(Message m) {
    if (!ready_) return;
    bool was_empty;
    {
      std::lock_guard<std::mutex> lk(q_mu_);
      was_empty = queue_.empty();
      const bool scene = std::holds_alternative<Scene>(m);
      queue_.push_back({std::move(m), scene});
      while (queue_.size() > kQueueDepth) {
        auto victim = std::find_if(queue_.begin(), queue_.end(), [](const Out& o) { return !o.scene; });
        if (victim == queue_.end()) victim = queue_.begin();
        queue_.erase(victim);
        ++stats_.dropped;
      }
    }
    // A non-empty queue means the network thread is already due to drain it.
    if (was_empty) wake();
  }

 private:
  struct Out {
    Message msg;
    bool scene = false;
  };

  ServerConfig cfg_;
  int listen_fd_ = -1;
  int wake_[2] = {-1, -1};
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<bool> ready_{false};
  std::thread thread_;
  Mailbox mailbox_;
  mutable std::mutex q_mu_;
  std::deque<Out> queue_;
  ServerStats stats_;

  // Connection state, touched only by the network thread.
  int fd_ = -1;
  enum class Mode { unknown, raw, ws } mode_ = Mode::unknown;
  bool hello_ = false;
  bool closing_ = false;
  std::string in_, out_, frag_;

  static void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

  void wake() {
    if (wake_[1] >= 0) {
      const char c = 1;
      [[maybe_unused]] auto r = ::write(wake_[1], &c, 1);
    }
  }

  void drop_client() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    ready_ = false;
    mode_ = Mode::unknown;
    hello_ = closing_ = false;
    in_.clear();
    out_.clear();
    frag_.clear();
    std::lock_guard<std::mutex> lk(q_mu_);
    queue_.clear();
  }

  void send_now(const std::string& text) {
    out_ += mode_ == Mode::ws ? ws_frame(text) : text + "\n";
  }

  void fail(const std::string& why) {
    send_now(serialize(ErrorMsg{why}));
    closing_ = true;
  }

  void count_malformed() {
    std::lock_guard<std::mutex> lk(q_mu_);
    ++stats_.malformed;
  }

  void handle_line(std::string_view line) {
    if (line.empty()) return;
    Message m;
    try {
      m = parse(line);
    } catch (const ProtocolError& e) {
      if (!hello_) return fail(std::string("handshake: ") + e.what());
      count_malformed();
      log::debug("session", "dropped malformed message: ", e.what());
      return;
    }
    if (!hello_) {
      const auto* h = std::get_if<Hello>(&m);
      if (!h) return fail("expected hello");
      if (h->proto != kProtocol) return fail("protocol version " + std::to_string(h->proto) + " not supported");
      hello_ = true;
      send_now(serialize(Welcome{cfg_.scenario, kProtocol}));
      ready_ = true;
      return;
    }
    if (const auto* c = std::get_if<Command>(&m))
      mailbox_.put(*c, now_ms());
    else
      count_malformed();
  }

  void process_input() {
    if (mode_ == Mode::unknown) {
      if (in_.size() < 4) return;
      mode_ = in_.rfind("GET ", 0) == 0 ? Mode::ws : Mode::raw;
      if (mode_ == Mode::ws) {
        const auto end = in_.find("\r\n\r\n");
        if (end == std::string::npos) {
          mode_ = Mode::unknown;
          if (in_.size() > 16384) closing_ = true;
          return;
        }
        const std::string req = in_.substr(0, end);
        in_.erase(0, end + 4);
        std::string key;
        std::size_t p = 0;
        while (p < req.size()) {
          auto e = req.find("\r\n", p);
          if (e == std::string::npos) e = req.size();
          std::string h = req.substr(p, e - p);
          p = e + 2;
          const auto colon = h.find(':');
          if (colon == std::string::npos) continue;
          std::string name = h.substr(0, colon);
          for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
          if (name == "sec-websocket-key") {
            key = h.substr(colon + 1);
            key.erase(0, key.find_first_not_of(' '));
            key.erase(key.find_last_not_of(" \r") + 1);
          }
        }
        if (key.empty()) {
          out_ += "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n";
          closing_ = true;
          return;
        }
        out_ += "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                "Sec-WebSocket-Accept: " +
                ws_accept_key(key) + "\r\n\r\n";
      }
    }
    if (mode_ == Mode::raw) {
      std::size_t nl;
      while (!closing_ && (nl = in_.find('\n')) != std::string::npos) {
        std::string line = in_.substr(0, nl);
        in_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        handle_line(line);
      }
      if (in_.size() > kMaxMessage) {
        in_.clear();
        count_malformed();
      }
    } else if (mode_ == Mode::ws) {
      while (!closing_) {
        std::optional<WsFrame> f;
        try {
          f = ws_take(in_);
        } catch (const ProtocolError&) {
          closing_ = true;
          break;
        }
        if (!f) break;
        if (f->opcode == 0x8) {
          out_ += ws_frame(f->payload.substr(0, std::min<std::size_t>(2, f->payload.size())), 0x8);
          closing_ = true;
        } else if (f->opcode == 0x9) {
          out_ += ws_frame(f->payload, 0xA);
        } else if (f->opcode == 0x1 || f->opcode == 0x0) {
          frag_ += f->payload;
          if (frag_.size() > kMaxMessage) {
            frag_.clear();
            count_malformed();
          }
          if (f->fin) {
            std::string msg;
            msg.swap(frag_);
            std::size_t p = 0;
            while (p <= msg.size()) {
              auto e = msg.find('\n', p);
              if (e == std::string::npos) e = msg.size();
              handle_line(std::string_view(msg).substr(p, e - p));
              p = e + 1;
            }
          }
        }
      }
    }
  }

  void pump_queue() {
    if (!out_.empty() || !ready_) return;
    std::deque<Out> batch;
    {
      std::lock_guard<std::mutex> lk(q_mu_);
      batch.swap(queue_);
      stats_.sent += static_cast<std::int64_t>(batch.size());
    }
    for (const auto& o : batch) send_now(serialize(o.msg));
  }

  void flush() {
    while (!out_.empty()) {
      const ssize_t n = ::send(fd_, out_.data(), out_.size(), MSG_NOSIGNAL);
      if (n > 0) {
        out_.erase(0, static_cast<std::size_t>(n));
        continue;
      }
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return;
      drop_client();
      return;
    }
  }

  void refuse(int fd) {
    const std::string msg = serialize(ErrorMsg{"another client is connected"}) + "\n";
    [[maybe_unused]] auto r = ::send(fd, msg.data(), msg.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
    ::close(fd);
    std::lock_guard<std::mutex> lk(q_mu_);
    ++stats_.refused;
  }

  void loop() {
    while (running_) {
      pollfd fds[3];
      fds[0] = {listen_fd_, POLLIN, 0};
      fds[1] = {wake_[0], POLLIN, 0};
      nfds_t n = 2;
      if (fd_ >= 0) {
        pump_queue();
        fds[2] = {fd_, static_cast<short>(POLLIN | (out_.empty() ? 0 : POLLOUT)), 0};
        n = 3;
      }
      if (::poll(fds, n, 50) < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (fds[1].revents & POLLIN) {
        char buf[256];
        while (::read(wake_[0], buf, sizeof buf) > 0) {
        }
      }
      if (fds[0].revents & POLLIN) {
        for (;;) {
          const int c = ::accept(listen_fd_, nullptr, nullptr);
          if (c < 0) break;
          if (fd_ >= 0) {
            refuse(c);
            continue;
          }
          fd_ = c;
          set_nonblocking(fd_);
          int one = 1;
          ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
          std::lock_guard<std::mutex> lk(q_mu_);
          ++stats_.connections;
        }
      }
      if (fd_ < 0) continue;
      if (n == 3 && (fds[2].revents & (POLLIN | POLLHUP | POLLERR))) {
        char buf[8192];
        for (;;) {
          const ssize_t r = ::recv(fd_, buf, sizeof buf, 0);
          if (r > 0) {
            in_.append(buf, static_cast<std::size_t>(r));
            continue;
          }
          if (r == 0 || (errno != EAGAIN && errno != EWOULDBLOCK)) {
            drop_client();
          }
          break;
        }
        if (fd_ < 0) continue;
        process_input();
      }
      pump_queue();
      flush();
      if (fd_ >= 0 && closing_ && out_.empty()) drop_client();
    }
  }
};

// ---------------------------------------------------------------- trainer hookup

// Feeds live commands into guidance and streams the world to the client.
inline void attach(trainer::Trainer& t, Server& server) {
  const env::Scenario sc = t.config().scenario.scenario;
  t.set_live([&server, sc]() -> std::optional<Eigen::VectorXd> {
    const auto c = server.latest_command(now_ms());
    if (!c) return std::nullopt;
    Eigen::VectorXd a(1);
    a(0) = sc == env::Scenario::left_turn ? c->pedal : c->steer;
    return a;
  });
  t.set_observer([&server](const env::World& w, const trainer::EpisodeMetrics& m, bool delta, bool start) {
    if (start)
      server.broadcast(make_scene(w, m.episode));
    else
      server.broadcast(make_frame(w, m.episode, m.steps, m.reward, m.distance, delta));
  });
}

}  // namespace phil::session
