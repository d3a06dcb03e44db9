# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot simulation kernels (see ``_pykernels``)."""


def lifetime_block_sum(long long p, long long g, long long b):
    cdef long long total = 0
    cdef long long i
    for i in range(g + 1):
        total += (p + i + b - 1) // b
    return total


def decode_block_demand(const long long[:] ctx, const long long[:] held, long long b):
    cdef Py_ssize_t i, n = ctx.shape[0]
    cdef long long total = 0
    for i in range(n):
        total += (ctx[i] + b) // b - held[i]
    return total


cdef struct Phase:
    double gpu
    double cpu
    double d2h
    double h2d


cdef double _contended(double io_bw, double kv_rate, double mem_bw) nogil:
    if kv_rate + io_bw <= mem_bw:
        return io_bw
    return io_bw * mem_bw / (kv_rate + io_bw)


cdef double _segment(double load_bytes, double packet_bytes, double bw,
                     Phase* phases, double* out) nogil:
    cdef double t = 0.0, link_free = 0.0, left = load_bytes
    cdef double comp_end, h2d_done, d2h_done, sz, start
    cdef int k
    for k in range(2):
        comp_end = t + (phases[k].gpu if phases[k].gpu > phases[k].cpu else phases[k].cpu)
        out[2] += phases[k].gpu
        out[3] += phases[k].cpu
        h2d_done = comp_end
        if phases[k].h2d > 0.0:
            while left > 0.0 and link_free < comp_end:
                sz = packet_bytes if left > packet_bytes else left
                link_free += sz / bw
                out[0] += sz / bw
                out[1] += sz / bw
                left -= sz
            start = link_free if link_free > comp_end else comp_end
            link_free = start + phases[k].h2d / bw
            out[0] += phases[k].h2d / bw
            h2d_done = link_free
        d2h_done = comp_end + phases[k].d2h / bw
        t = h2d_done if h2d_done > d2h_done else d2h_done
    while left > 0.0:
        sz = packet_bytes if left > packet_bytes else left
        link_free += sz / bw
        out[0] += sz / bw
        out[1] += sz / bw
        left -= sz
    return t if t > link_free else link_free


cdef double _run_segment(double load_bytes, double packet_bytes, double io_bw,
                         double mem_bw, bint contention, double kv_bytes,
                         Phase* phases, double* out, double* bw_out) nogil:
    cdef double probe[4]
    cdef double t0, bw = io_bw
    if contention and kv_bytes > 0.0:
        probe[0] = 0.0
        probe[1] = 0.0
        probe[2] = 0.0
        probe[3] = 0.0
        t0 = _segment(load_bytes, packet_bytes, io_bw, phases, probe)
        if t0 > 0.0:
            bw = _contended(io_bw, kv_bytes / t0, mem_bw)
    bw_out[0] = bw
    return _segment(load_bytes, packet_bytes, bw, phases, out)


def iteration_timeline(const double[:] layer_bytes, double packet_bytes,
                       double io_bw, double mem_bw, bint contention,
                       ga, gb, cpu, d2h, h2d, kv):
    cdef Py_ssize_t i, n = layer_bytes.shape[0]
    cdef double out[4]
    cdef Phase prologue[2]
    cdef Phase main[2]
    cdef Phase epilogue[2]
    cdef double wall = 0.0, dur, bw = io_bw, min_bw = io_bw
    cdef double max_resident = 0.0, resident
    cdef double ga0 = ga[0], ga1 = ga[1], gb0 = gb[0], gb1 = gb[1]
    cdef double c0 = cpu[0], c1 = cpu[1], d0 = d2h[0], d1 = d2h[1]
    cdef double h0 = h2d[0], h1 = h2d[1], kv0 = kv[0], kv1 = kv[1]
    cdef double kv_bytes

    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    out[3] = 0.0
    prologue[0] = Phase(ga0, 0.0, d0, 0.0)
    prologue[1] = Phase(ga1, c0, d1, h0)
    main[0] = Phase(gb0 + ga0, c1, d0, h1)
    main[1] = Phase(gb1 + ga1, c0, d1, h0)
    epilogue[0] = Phase(gb0, c1, 0.0, h1)
    epilogue[1] = Phase(gb1, 0.0, 0.0, 0.0)

    resident = layer_bytes[n - 1] if n > 0 else 0.0
    with nogil:
        for i in range(n):
            kv_bytes = kv0 if i == 0 else kv0 + kv1
            if i == 0:
                dur = _run_segment(layer_bytes[i], packet_bytes, io_bw, mem_bw,
                                   contention, kv_bytes, prologue, out, &bw)
            else:
                dur = _run_segment(layer_bytes[i], packet_bytes, io_bw, mem_bw,
                                   contention, kv_bytes, main, out, &bw)
            wall += dur
            if bw < min_bw:
                min_bw = bw
            if resident + layer_bytes[i] > max_resident:
                max_resident = resident + layer_bytes[i]
            resident = layer_bytes[i]
        dur = _run_segment(0.0, packet_bytes, io_bw, mem_bw, contention, kv1,
                           epilogue, out, &bw)
        wall += dur
        if bw < min_bw:
            min_bw = bw
    return wall, out[0], out[1], out[2], out[3], max_resident, min_bw
