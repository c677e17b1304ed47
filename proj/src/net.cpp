#include "telewalk/net.hpp"

#include "telewalk/scenario_io.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <stdexcept>

namespace telewalk::service {

using Clock = std::chrono::steady_clock;

struct Server::Client {
  enum class Role { unknown, user, viewer };

  int fd = -1;
  int id = 0;
  Role role = Role::unknown;  // tick thread only
  long decimation = 1;        // tick thread only
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<std::string> out;
  bool closed = false;
  std::thread reader;
  std::thread writer;

  void push(std::string line) {
    {
      std::lock_guard lock(mutex);
      if (closed) return;
      out.push_back(std::move(line));
    }
    cv.notify_one();
  }

  void close() {
    {
      std::lock_guard lock(mutex);
      closed = true;
    }
    cv.notify_all();
    ::shutdown(fd, SHUT_RDWR);
  }

  void write_loop() {
    for (;;) {
      std::string line;
      {
        std::unique_lock lock(mutex);
        cv.wait(lock, [&] { return closed || !out.empty(); });
        if (out.empty()) return;
        line = std::move(out.front());
        out.pop_front();
      }
      line.push_back('\n');
      std::size_t sent = 0;
      while (sent < line.size()) {
        const ssize_t n = ::send(fd, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) {
          if (n < 0 && errno == EINTR) continue;
          close();
          return;
        }
        sent += static_cast<std::size_t>(n);
      }
    }
  }
};

namespace {

[[noreturn]] void fail(const std::string& what) {
  throw std::runtime_error(what + ": " + std::strerror(errno));
}

Json event_json(const std::string& kind, const std::string& message) {
  return to_json(Event{0.0, kind, message});
}

}  // namespace

Server::Server(crowd::Scenario scenario, SessionConfig config, ServerOptions options)
    : scenario_(std::move(scenario)), config_(std::move(config)), options_(std::move(options)) {}

Server::~Server() { stop(); }

int Server::start(int port, const std::string& host) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) fail("socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw std::runtime_error("bad host " + host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) fail("bind");
  if (::listen(listen_fd_, 16) < 0) fail("listen");
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  accept_thread_ = std::thread([this] { accept_loop(); });
  tick_thread_ = std::thread([this] { tick_loop(); });
  return port_;
}

void Server::stop() {
  stopping_ = true;
  inbox_cv_.notify_all();
  if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  if (accept_thread_.joinable()) accept_thread_.join();
  if (tick_thread_.joinable()) tick_thread_.join();
  std::vector<std::shared_ptr<Client>> clients;
  {
    std::lock_guard lock(clients_mutex_);
    clients.swap(clients_);
  }
  for (auto& c : clients) c->close();
  for (auto& c : clients) {
    if (c->reader.joinable()) c->reader.join();
    if (c->writer.joinable()) c->writer.join();
    ::close(c->fd);
  }
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  {
    std::lock_guard lock(records_mutex_);
  }
  stopped_cv_.notify_all();
}

void Server::wait() {
  std::unique_lock lock(records_mutex_);
  stopped_cv_.wait(lock, [&] { return stopping_.load(); });
}

std::vector<SessionRecord> Server::sessions() const {
  std::lock_guard lock(records_mutex_);
  return records_;
}

void Server::accept_loop() {
  int next_id = 1;
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto c = std::make_shared<Client>();
    c->fd = fd;
    c->id = next_id++;
    c->push(Json{{"type", "config"}, {"scenario", io::scenario_to_json(scenario_)}, {"session", to_json(config_)}}.dump());
    c->writer = std::thread([c] { c->write_loop(); });
    c->reader = std::thread([this, c] { read_loop(c); });
    std::lock_guard lock(clients_mutex_);
    clients_.push_back(std::move(c));
  }
}

void Server::read_loop(std::shared_ptr<Client> c) {
  std::string buffer;
  char chunk[4096];
  for (;;) {
    const ssize_t n = ::recv(c->fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
      const std::string_view line(buffer.data() + start, nl - start);
      if (line.empty()) continue;
      Json body = Json::parse(line, nullptr, false);
      const std::string type = body.is_object() && body.contains("type") && body["type"].is_string()
                                   ? body["type"].get<std::string>()
                                   : std::string();
      if (type == "hello") {
        post({Inbound::hello, c, std::move(body)});
      } else if (type == "pose") {
        post({Inbound::pose, c, std::move(body)});
      } else if (type == "bye") {
        post({Inbound::bye, c, {}});
      } else {
        c->push(event_json("rejected", "malformed or unknown message").dump());
      }
    }
    buffer.erase(0, start);
  }
  post({Inbound::gone, c, {}});
}

void Server::post(Inbound m) {
  {
    std::lock_guard lock(inbox_mutex_);
    inbox_.push_back(std::move(m));
  }
  inbox_cv_.notify_one();
}

void Server::tick_loop() {
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(kTrackerPeriod));
  while (!stopping_) {
    std::optional<Inbound> m;
    {
      std::unique_lock lock(inbox_mutex_);
      const auto deadline = next_dropout_.value_or(Clock::now() + std::chrono::milliseconds(100));
      inbox_cv_.wait_until(lock, deadline, [&] { return stopping_ || !inbox_.empty(); });
      if (stopping_) break;
      if (!inbox_.empty()) {
        m = std::move(inbox_.front());
        inbox_.pop_front();
      }
    }
    if (m) {
      try {
        handle(*m);
      } catch (const Json::exception& e) {
        m->client->push(event_json("rejected", e.what()).dump());
      }
    } else if (session_ && next_dropout_ && Clock::now() >= *next_dropout_) {
      run_tick(std::nullopt);
      *next_dropout_ += period;
    }
  }
  if (session_) end_session("server stopped");
}

void Server::handle(Inbound& m) {
  Client& c = *m.client;
  switch (m.kind) {
    case Inbound::hello: {
      const std::string role = m.body.value("role", "");
      if (role == "user" && !session_) {
        c.role = Client::Role::user;
        start_session(m.client);
      } else if (role == "user" || role == "viewer") {
        if (role == "user") c.push(event_json("warning", "a session is already running; joined as viewer").dump());
        c.role = Client::Role::viewer;
        const Json& d = m.body.contains("decimation") ? m.body["decimation"] : Json(1);
        c.decimation = d.is_number_integer() && d.get<long>() > 0 ? d.get<long>() : 1;
        if (session_) c.push(session_->plan_message().dump());
      } else {
        c.push(event_json("rejected", "hello needs role user or viewer").dump());
      }
      break;
    }
    case Inbound::pose: {
      if (!session_ || m.client != user_) {
        c.push(event_json("rejected", "pose from a client that is not the session user").dump());
        break;
      }
      TrackerSample sample;
      try {
        sample = sample_from_json(m.body);
      } catch (const geometry::InvalidInput& e) {
        c.push(event_json("rejected", e.what()).dump());
        break;
      }
      IngestResult in = ingest_->push(sample);
      send_events(in.events);
      if (log_) log_->record_events(in.events);
      if (in.accepted) {
        run_tick(in.sample);
        next_dropout_ = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                           std::chrono::duration<double>(config_.dropout_gap));
      }
      break;
    }
    case Inbound::bye:
    case Inbound::gone:
      if (m.client == user_) end_session(m.kind == Inbound::bye ? "user finished" : "user disconnected");
      if (m.kind == Inbound::gone) {
        std::shared_ptr<Client> gone;
        {
          std::lock_guard lock(clients_mutex_);
          for (auto it = clients_.begin(); it != clients_.end(); ++it) {
            if (it->get() == &c) {
              gone = *it;
              clients_.erase(it);
              break;
            }
          }
        }
        if (gone) {
          gone->close();
          // The reader posted this message as its last act, so it is exiting.
          if (gone->reader.joinable()) gone->reader.join();
          if (gone->writer.joinable()) gone->writer.join();
          ::close(gone->fd);
        }
      }
      break;
  }
}

void Server::start_session(const std::shared_ptr<Client>& user) {
  try {
    session_ = std::make_unique<Session>(scenario_, config_, options_.seed);
  } catch (const std::exception& e) {
    user->push(event_json("session_failed", e.what()).dump());
    user->role = Client::Role::viewer;
    return;
  }
  user_ = user;
  ingest_ = std::make_unique<Ingest>(config_.compression.room, config_.dropout_gap);
  log_dir_.clear();
  if (!options_.log_root.empty()) {
    std::lock_guard lock(records_mutex_);
    char name[32];
    std::snprintf(name, sizeof name, "session-%03zu", records_.size() + 1);
    log_dir_ = (std::filesystem::path(options_.log_root) / name).string();
  }
  if (!log_dir_.empty()) log_ = std::make_unique<SessionLog>(log_dir_, scenario_, config_, options_.seed);
  plan_version_ = session_->plan_version();
  broadcasts_ = 0;
  next_dropout_.reset();
  broadcast(session_->plan_message().dump());
  send_events({{0.0, "session_started", "user connected"}});
}

void Server::end_session(const std::string& reason) {
  if (!session_) return;
  const std::vector<Event> events{{session_->world().time(), "session_ended", reason}};
  send_events(events);
  SessionRecord record;
  record.summary = session_->summary();
  record.accepted = ingest_->accepted();
  record.rejected = ingest_->rejected();
  record.broadcasts = broadcasts_;
  record.log_dir = log_dir_;
  if (log_) {
    log_->record_events(events);
    log_->close(record.summary, {{"rejected", record.rejected}, {"end", reason}});
  }
  Json summary = to_json(record.summary);
  summary["type"] = "summary";
  broadcast(summary.dump());
  if (user_) user_->role = Client::Role::viewer;
  session_.reset();
  ingest_.reset();
  log_.reset();
  user_.reset();
  next_dropout_.reset();
  {
    std::lock_guard lock(records_mutex_);
    records_.push_back(record);
    if (options_.stop_after_session) stopping_ = true;
  }
  stopped_cv_.notify_all();
}

void Server::run_tick(const std::optional<TrackerSample>& sample) {
  TickOutput out = session_->tick(sample);
  if (session_->plan_version() != plan_version_) {
    plan_version_ = session_->plan_version();
    broadcast(session_->plan_message().dump());
  }
  if (log_) log_->record(sample, out, session_->world());
  broadcast(out.encoded, out.state.tick);
  ++broadcasts_;
  send_events(out.events);
}

void Server::broadcast(const std::string& line, std::optional<long> tick) {
  std::lock_guard lock(clients_mutex_);
  for (auto& c : clients_) {
    if (c->role == Client::Role::unknown) continue;
    if (tick && c->role == Client::Role::viewer && *tick % c->decimation != 0) continue;
    c->push(line);
  }
}

void Server::send_events(const std::vector<Event>& events) {
  for (const Event& e : events) broadcast(to_json(e).dump());
}

// LineClient -----------------------------------------------------------------------

LineClient::LineClient(const std::string& host, int port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) fail("socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw std::runtime_error("bad host " + host);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) fail("connect");
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

LineClient::~LineClient() { close(); }

void LineClient::send(const std::string& line) {
  const std::string data = line + '\n';
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) fail("send");
    sent += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> LineClient::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0 || fd_ < 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(left.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return std::nullopt;
    char chunk[8192];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n <= 0) return std::nullopt;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void LineClient::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

// Scripted wire client ---------------------------------------------------------------

ClientRunResult run_scripted_client(const std::string& host, int port, const ScriptPolicy& policy, bool paced) {
  using namespace std::chrono;
  LineClient client(host, port);
  ClientRunResult result;
  std::optional<compression::CorrespondenceMap> map;
  std::optional<Pose> avatar;
  std::optional<Pose> user_start;
  std::optional<compression::RoomSpec> room;
  long last_state_tick = -1;

  // Reads one message and folds it into the client state; false on timeout.
  auto pump = [&](milliseconds timeout) -> std::optional<Json> {
    const auto line = client.read_line(timeout);
    if (!line) return std::nullopt;
    Json j = Json::parse(*line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "config") {
      const Json& sc = j.at("session");
      user_start = io::pose_from_json(sc.at("user_start"));
      room = session_config_from_json(sc).compression.room;
    } else if (type == "plan") {
      ++result.plans;
      compression::Correspondence c;
      c.target = io::polypath_from_json(j.at("target"));
      c.user = io::polypath_from_json(j.at("user"));
      map.emplace(std::move(c));
      if (!avatar) avatar = map->map_pose(*user_start);
    } else if (type == "state") {
      ++result.states;
      const BroadcastState st = state_from_json(j);
      avatar = st.avatar;
      last_state_tick = st.tick;
    } else if (type == "event") {
      ++result.events;
    }
    return j;
  };

  const milliseconds wait{5000};
  while (!user_start) {
    if (!pump(wait)) throw std::runtime_error("no config message from server");
  }
  client.send(Json{{"type", "hello"}, {"role", "user"}}.dump());
  while (!map) {
    if (!pump(wait)) throw std::runtime_error("no plan message from server");
  }

  ScriptedParticipant walker(policy, *user_start, *room);
  const auto period = duration_cast<steady_clock::duration>(duration<double>(kTrackerPeriod));
  const auto t0 = steady_clock::now();
  while (const auto sample = walker.next(*map, *avatar)) {
    if (paced) {
      const auto due = t0 + period * sample->seq;
      std::this_thread::sleep_until(due);
      result.max_lateness = std::max(result.max_lateness, duration<double>(steady_clock::now() - due).count());
    }
    client.send(to_json(*sample).dump());
    ++result.sent;
    // Lock-step: the next pose is steered from this pose's broadcast.
    const long expected = result.sent - 1;
    while (last_state_tick < expected) {
      if (!pump(wait)) throw std::runtime_error("state broadcast timed out");
    }
  }
  result.walker_failed = walker.failed();
  client.send(Json{{"type", "bye"}}.dump());
  for (;;) {
    const auto j = pump(wait);
    if (!j) throw std::runtime_error("no summary from server");
    if (j->at("type") == "summary") {
      result.summary = *j;
      break;
    }
  }
  return result;
}

}  // namespace telewalk::service
