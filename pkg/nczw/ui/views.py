import shutil
from abc import abstractmethod
from typing import Dict, List, Mapping

from click import style
from tabulate import tabulate


def format_number(value) -> str:
    if isinstance(value, float):
        return f'{value:.4g}'
    return str(value)


class View:
    """ Base class of view """

    def __init__(self, summary: Mapping, title: str, color_scheme):
        """
        :param summary: canonical report summary, see nczw.verify.ConstantReport.summary
        :param title: str
        :param color_scheme: nczw.ui.ui_manager.ColorScheme
        """
        self.title = title
        self.summary = summary
        self.active = True
        self.color_scheme = color_scheme

    @abstractmethod
    def __str__(self) -> str:
        return self._format_title()

    def _format_title(self) -> str:
        terminal_size = shutil.get_terminal_size()
        fmt = style(self.title.center(terminal_size.columns, '─'), fg=self.color_scheme.title)
        fmt += '\n'
        return fmt

    def _verdict(self, passed: bool) -> str:
        if passed:
            return style('pass', fg=self.color_scheme.passed)
        return style('FAIL', fg=self.color_scheme.failed)


class ChecksView(View):
    """ One row per (suite, check): count, failures, worst residual against its tolerance """

    def __init__(self, summary: Mapping, color_scheme):
        super().__init__(summary, 'Checks', color_scheme)

    def __str__(self) -> str:
        rows = []
        for check in self.summary.get('checks', []):
            rows.append([style(f'{check["suite"]}/{check["name"]}', fg=self.color_scheme.name), check['count'],
                         check['failures'], format_number(check['worst']), format_number(check['tolerance']),
                         self._verdict(check['passed'])])
        table = tabulate(rows, headers=['check', 'count', 'failures', 'worst', 'tolerance', ''], tablefmt='plain',
                         numalign='left')
        return super().__str__() + table


class ConstantsView(View):
    """ Max and median of every ratio table """

    def __init__(self, summary: Mapping, color_scheme):
        super().__init__(summary, 'Constants', color_scheme)

    def __str__(self) -> str:
        rows = []
        for constant in self.summary.get('constants', []):
            rows.append([style(f'{constant["suite"]}/{constant["theorem"]}', fg=self.color_scheme.name),
                         constant['weight'], constant['kernel'], constant['m'],
                         style(format_number(constant['max']), fg=self.color_scheme.value),
                         format_number(constant['median']), constant['count']])
        table = tabulate(rows, headers=['ratio', 'weight', 'kernel', 'm', 'max', 'median', 'samples'],
                         tablefmt='plain', numalign='left')
        return super().__str__() + table


class StabilityView(View):
    """ Per-depth constants and the trend statistic of every ratio table """

    def __init__(self, summary: Mapping, color_scheme):
        super().__init__(summary, 'Stability across J', color_scheme)

    def __str__(self) -> str:
        records: List[Dict] = self.summary.get('stability', [])
        depths = sorted({int(depth) for record in records for depth in record['per_depth']})
        rows = []
        for record in records:
            per_depth = record['per_depth']
            rows.append([style(f'{record["suite"]}/{record["theorem"]}', fg=self.color_scheme.name),
                         record['weight'], record['kernel'], record['m']] +
                        [format_number(per_depth.get(str(depth), '')) for depth in depths] +
                        [format_number(record['trend']), self._stability_verdict(record)])
        headers = ['ratio', 'weight', 'kernel', 'm'] + [f'J={depth}' for depth in depths] + ['rho', '']
        return super().__str__() + tabulate(rows, headers=headers, tablefmt='plain', numalign='left')

    def _stability_verdict(self, record: Mapping) -> str:
        if not record.get('judged', True):
            return style('info', fg=self.color_scheme.caveat)
        return self._verdict(record['passed'])


class CaveatsView(View):
    """ Truncation and monotonicity notes collected during the run """

    def __init__(self, summary: Mapping, color_scheme):
        super().__init__(summary, 'Caveats', color_scheme)

    def __str__(self) -> str:
        caveats = self.summary.get('caveats', [])
        lines = [style(caveat, fg=self.color_scheme.caveat) for caveat in caveats] or ['none']
        return super().__str__() + '\n'.join(lines)
