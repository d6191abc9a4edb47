import logging
import os
from threading import Thread
from queue import Queue

logger = logging.getLogger(__name__)


class _KILL:
    pass


def thread_map(
    fun,
    seq,
    Nt=None,
    *,
    Nin_buffer=1,
    raise_exceptions=True,
):
    """
    Parallel map that yields results in input order.

    Races are simulated and featurized independently, but outputs (trade logs,
    datasets) must come out in the same order regardless of thread timing.
    Finished results are held until every earlier one has been yielded.

    Inputs:
    -------
    fun
        Function to map

    seq
        Sequence

    Nt [None]
        Number of threads. Defaults to os.cpu_count(). Nt=1 runs in the calling
        thread.

    Nin_buffer [1]
        Number of input items to pull ahead of the workers. Set to -1 for no
        limit.

    raise_exceptions [True]
        If True, the first exception (in input order) is raised. If False, the
        exception object is yielded in its slot with `seq_index` set.
    """
    Nt = Nt or os.cpu_count()
    if Nt == 1:
        for ii, item in enumerate(seq):
            try:
                yield fun(item)
            except Exception as E:
                if raise_exceptions:
                    raise
                E.seq_index = ii
                yield E
        return

    kill = _KILL()
    qin = Queue(maxsize=Nin_buffer)
    qout = Queue()

    def _adder():
        for ii, item in enumerate(seq):
            qin.put((ii, item))
        for _ in range(Nt):
            qin.put((-1, kill))

    def _worker():
        while True:
            ii, item = qin.get()
            if item is kill:
                qout.put((-1, kill))
                break
            try:
                res = fun(item)
            except Exception as E:
                E.seq_index = ii
                res = E
            qout.put((ii, res))

    threads = [Thread(target=_adder, daemon=True)]
    threads += [Thread(target=_worker, daemon=True) for _ in range(Nt)]
    for thread in threads:
        thread.start()

    pending = {}
    nextii = 0
    done = 0
    while done < Nt:
        ii, res = qout.get()
        if res is kill:
            done += 1
            continue
        pending[ii] = res
        while nextii in pending:
            res = pending.pop(nextii)
            nextii += 1
            if isinstance(res, Exception) and getattr(res, "seq_index", None) == nextii - 1:
                if raise_exceptions:
                    raise res
            yield res

    for thread in threads:
        thread.join()
